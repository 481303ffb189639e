#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "camerapose/geometry.hpp"
#include "camerapose/nets.hpp"
#include "camerapose/skeleton.hpp"

namespace camerapose::data {

using nets::ConfVector;

inline constexpr const char* kDatasetFormat = "camerapose-dataset";
inline constexpr int kDatasetVersion = 1;

// Pixel-convention intrinsics plus the root offset in mm.
struct CameraRecord {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  double tx = 0, ty = 0, tz = 0;

  CameraIntrinsics intrinsics() const { return {fx, fy, cx, cy}; }
  Offset3D offset() const { return {tx, ty, tz}; }
  bool operator==(const CameraRecord&) const = default;
};

struct SampleRecord {
  std::string id;
  Pose2D joints2d_px = Pose2D::Zero();
  ConfVector conf = ConfVector::Ones();
  double width = 0;
  double height = 0;
  std::optional<Pose3D> joints3d_mm;
  std::optional<CameraRecord> camera;
  std::string source_tag;
  nlohmann::json extra = nlohmann::json::object();  // unknown fields, preserved verbatim

  bool paired() const { return joints3d_mm.has_value() && camera.has_value(); }
  // Throws InvariantViolation naming the record.
  void validate() const;
  bool operator==(const SampleRecord&) const = default;
};

nlohmann::json record_to_json(const SampleRecord& r);
// `line` is used in ParseError messages only.
SampleRecord record_from_json(const nlohmann::json& j, size_t line);

// One header line then one record per line.
void write_dataset(const std::vector<SampleRecord>& records, const std::string& path);
std::vector<SampleRecord> read_dataset(const std::string& path);

// Pixel intrinsics -> normalized-coordinate intrinsics for a W x H image.
CameraIntrinsics normalize_intrinsics(const CameraIntrinsics& px, double width, double height);
CameraIntrinsics denormalize_intrinsics(const CameraIntrinsics& n, double width, double height);

// Training view of a record: everything in normalized image coordinates.
struct Sample {
  std::string id;
  Pose2D x = Pose2D::Zero();
  ConfVector conf = ConfVector::Ones();
  std::optional<Pose3D> X;
  std::optional<CameraIntrinsics> K;
  std::optional<Offset3D> t;

  bool paired() const { return X.has_value() && K.has_value() && t.has_value(); }
};

Sample to_sample(const SampleRecord& r);
std::vector<Sample> to_samples(const std::vector<SampleRecord>& records);

struct AngleRange {
  double lo = 0;  // degrees
  double hi = 0;
};

// Per-bone joint-angle limits: flexion (sagittal) and abduction (frontal).
struct JointLimits {
  std::array<AngleRange, kNumBones> flex{};
  std::array<AngleRange, kNumBones> abduct{};

  static JointLimits nominal();
  // Wider ranges reaching poses the nominal set never produces (raised arms,
  // high kicks, deep bends).
  static JointLimits wide();
};

struct SynthConfig {
  int n_paired = 1000;
  int n_weak = 0;
  std::uint64_t seed = 0;
  bool seed_set = false;
  double image_width = 1000;
  double image_height = 1000;
  int n_subjects = 8;
  AngleRange subject_scale{0.9, 1.1};
  double bone_jitter = 0.03;
  AngleRange yaw_deg{-60, 60};
  AngleRange pitch_deg{-10, 10};
  AngleRange roll_deg{-5, 5};
  AngleRange focal_px{1000, 1300};
  double principal_jitter_px = 20;
  AngleRange depth_mm{4000, 6500};
  double shift_mm = 300;
  double noise_sigma = 0.0;  // normalized units, per axis
  double conf_scale = 1.0;
  bool paired_ood = false;
  bool weak_ood = true;
  std::string id_prefix;

  void validate() const;
  nlohmann::json to_json() const;
  // Keys as in to_json; absent keys keep their defaults, unknown keys throw
  // ConfigError. A present "seed" marks the seed as set.
  static SynthConfig from_json(const nlohmann::json& j);
};

struct SynthResult {
  std::vector<SampleRecord> paired;
  std::vector<SampleRecord> weak;
};

SynthResult generate_synthetic(const SynthConfig& cfg);

// Template bone lengths in mm, indexed by bone.
const std::array<double, kNumBones>& template_bone_lengths();

// Confidence model shared by the generator and on-the-fly corruption:
// conf = clamp(1 - |noise| / (3 sigma scale), 0.05, 1).
double confidence_from_noise(double noise_norm, double sigma, double scale = 1.0);

struct Corrupted {
  Pose2D noisy;
  ConfVector conf;
};
Corrupted corrupt_2d(const Pose2D& clean, double sigma, std::mt19937_64& rng, double scale = 1.0);

// Cycles through [0, n) in seeded shuffled passes, batch by batch. The last
// batch of a pass may be short.
class BatchStream {
 public:
  BatchStream(size_t n, size_t batch_size, std::uint64_t seed);

  std::vector<size_t> next();
  size_t batches_per_pass() const { return (n_ + batch_size_ - 1) / batch_size_; }
  size_t passes_started() const { return passes_; }

  nlohmann::json state() const;
  void restore(const nlohmann::json& j);

 private:
  void reshuffle();

  size_t n_;
  size_t batch_size_;
  std::mt19937_64 rng_;
  std::vector<size_t> order_;
  size_t cursor_ = 0;
  size_t passes_ = 0;
};

enum class BatchKind { Paired, Weak };

// Deterministic interleave: within each window of (paired + weak) batches,
// paired batches come first. weak == 0 yields only paired batches.
std::vector<BatchKind> mixed_schedule(int paired, int weak, size_t total);

}  // namespace camerapose::data
