#pragma once

// Generator-driven 3D pose augmentation: bone angle, then bone length, then a
// rigid re-placement in front of the source camera.

#include <cstdint>
#include <string>
#include <vector>

#include "camerapose/autograd.hpp"
#include "camerapose/data.hpp"
#include "camerapose/geometry.hpp"
#include "camerapose/nets.hpp"
#include "camerapose/skeleton.hpp"

namespace camerapose::augment {

using BoneAngles = Eigen::Matrix<double, kNumBones, 3>;
using BoneLogScales = Eigen::Matrix<double, kNumBones, 1>;

inline constexpr double kMinSourceBoneMm = 1e-6;
inline constexpr double kMinAugmentedBoneMm = 10.0;

// Bone k's direction is rotated by the accumulated rotation of its ancestors
// composed with its own axis-angle; descendants follow rigidly. Throws
// DegenerateBone for a source bone shorter than kMinSourceBoneMm.
Pose3D apply_bone_angle(const Pose3D& X, const BoneAngles& angles,
                        const KinematicTree& tree = KinematicTree::canonical());
// Bone k's length is multiplied by exp(log_scale_k), directions kept.
Pose3D apply_bone_length(const Pose3D& X, const BoneLogScales& log_scales,
                         const KinematicTree& tree = KinematicTree::canonical());

struct Provenance {
  std::string source_id;
  std::uint64_t noise_seed = 0;
};

struct AugmentedPair {
  Pose3D X;  // root-relative, mm
  Pose2D x;  // normalized image coordinates
  CameraIntrinsics K;  // source intrinsics
  Offset3D t;          // generator root placement
  nets::GeneratorOutput params;
  Provenance provenance;

  // Finite, every bone longer than kMinAugmentedBoneMm, and x reprojects X.
  bool valid(double tol = 1e-9) const;
};

// Throws BehindCamera if the re-placed pose reaches behind the camera.
AugmentedPair augment_pair(const data::Sample& source, const nets::GeneratorOutput& g,
                           Provenance provenance = {});

// Per-sample noise stream derived from (seed, sample id).
std::uint64_t noise_seed(std::uint64_t seed, const std::string& sample_id, int attempt);
Eigen::Matrix<double, nets::kNoiseDim, 1> draw_noise(std::uint64_t noise_seed);

struct AugmentStats {
  long long attempts = 0;
  long long rejected = 0;
  long long exhausted = 0;  // samples with every attempt rejected

  double rejection_rate() const {
    return attempts == 0 ? 0.0 : static_cast<double>(rejected) / static_cast<double>(attempts);
  }
};

struct AugmentedSet {
  std::vector<AugmentedPair> pairs;
  AugmentStats stats;
};

// One augmented pair per paired source, resampling noise on rejection.
AugmentedSet augment_dataset(const nets::PoseGenerator& gen, const std::vector<data::Sample>& paired,
                             std::uint64_t seed, int max_attempts = 8);

// Differentiable batch form used in training.
struct AugmentedBatch {
  ag::Var poses3d;  // B x 48 root-relative mm
  ag::Var camera;   // B x 7: source intrinsics, generator placement
  ag::Var poses2d;  // B x 32 reprojection of poses3d through camera
};

// poses3d: B x 48 source poses (constants); intrinsics: B x 4 normalized
// (fx, fy, cx, cy). Depth is clamped, never thrown.
AugmentedBatch augment_batch(const ag::Var& poses3d, const nets::GeneratorBatch& g,
                             const ag::Matrix& intrinsics);

// Rodrigues rotation from a B x 3 axis-angle batch; entry (r, c) of each
// rotation is column 3r + c of the B x 9 result.
ag::Var rodrigues(const ag::Var& axis_angle);

}  // namespace camerapose::augment
