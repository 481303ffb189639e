#pragma once

// The five trainable heads: RefineNet, the 3D lifter, the camera branch, the
// pose generator and the two KCS discriminators. Every head is a pure function
// of (ParamSet, input) over a batch laid out one sample per row.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "camerapose/autograd.hpp"
#include "camerapose/geometry.hpp"
#include "camerapose/skeleton.hpp"

namespace camerapose::nets {

using ag::Var;
using ConfVector = Eigen::Matrix<double, kNumJoints, 1>;

// Camera-branch output layout, one row per sample.
enum CameraColumn : int { kFx = 0, kFy, kCx, kCy, kTx, kTy, kTz, kCameraColumns };

inline constexpr double kMinFocal = 1e-3;
inline constexpr double kMinDepthOffsetMm = 500.0;
inline constexpr double kMaxDepthOffsetMm = 20000.0;
inline constexpr double kCameraTranslationScaleMm = 1000.0;

// Generator safety rails.
inline constexpr double kMaxBoneAngle = 0.5;  // radians, bound on the axis-angle norm
inline const double kMaxLogScale = std::log(1.3);
inline constexpr double kMaxRigidAngle = std::numbers::pi / 4.0;
inline constexpr double kMaxRigidShiftMm = 500.0;
inline constexpr double kMinRigidDepthMm = 2000.0;
inline constexpr double kMaxRigidDepthMm = 8000.0;
inline constexpr int kNoiseDim = 16;

struct ResidualBlockSpec {
  int width = 512;
};

struct NetConfig {
  int refine_width = 512;
  int lifter_width = 512;
  int camera_width = 512;
  int generator_width = 256;
  int discriminator_width = 512;
  double lifter_output_scale_mm = 1000.0;

  nlohmann::json to_json() const;
  static NetConfig from_json(const nlohmann::json& j);
};

// Building blocks over a ParamSet; "name.W" is in x out, "name.b" is 1 x out.
void add_linear(ag::ParamSet& params, const std::string& name, Eigen::Index in, Eigen::Index out,
                ag::Matrix weight);
Var linear(const ag::ParamSet& params, const std::string& name, const Var& x);
void add_residual_block(ag::ParamSet& params, const std::string& name, ResidualBlockSpec spec,
                        std::mt19937_64& rng);
// x + relu(fc2(relu(fc1(x))))
Var residual_block(const ag::ParamSet& params, const std::string& name, const Var& x);

// Differentiable part-aware KCS features: for every body part, the upper
// triangle (diagonal included) of its Gram block, flattened. Input is a batch
// of joint-major flattened poses with `dims` coordinates per joint. 3D input
// is in mm and the features in m^2; 2D features are scaled by 10.
std::array<Var, kNumParts> kcs_features(const Var& poses, int dims);
int kcs_feature_width(BodyPart part);

class RefineNet {
 public:
  RefineNet(const ResidualBlockSpec& spec, std::uint64_t seed);

  // coords: B x 32 normalized, conf_norm: B x 16 (rows sum to one). Works in
  // the pose's own frame (centred, unit RMS radius), so refining a translated
  // or scaled pose gives the translated or scaled result.
  Var forward(const Var& coords, const Var& conf_norm) const;
  Pose2D operator()(const Pose2D& coords, const ConfVector& conf_norm) const;

  ag::ParamSet& params() { return params_; }
  const ag::ParamSet& params() const { return params_; }
  static Eigen::Index expected_param_count(int width);

 private:
  ag::ParamSet params_;
};

class Lifter {
 public:
  Lifter(const ResidualBlockSpec& spec, double output_scale_mm, std::uint64_t seed);

  // B x 32 normalized 2D -> B x 48 root-relative mm; pelvis columns are zero.
  Var forward(const Var& coords) const;
  Pose3D operator()(const Pose2D& coords) const;

  ag::ParamSet& params() { return params_; }
  const ag::ParamSet& params() const { return params_; }
  static Eigen::Index expected_param_count(int width);

 private:
  ag::ParamSet params_;
  double output_scale_mm_;
};

class CameraBranch {
 public:
  CameraBranch(const ResidualBlockSpec& spec, std::uint64_t seed);

  // B x 32 normalized 2D -> B x 7 laid out per CameraColumn.
  Var forward(const Var& coords) const;
  std::pair<CameraIntrinsics, Offset3D> operator()(const Pose2D& coords) const;

  ag::ParamSet& params() { return params_; }
  const ag::ParamSet& params() const { return params_; }
  static Eigen::Index expected_param_count(int width);

 private:
  ag::ParamSet params_;
};

struct GeneratorOutput {
  Eigen::Matrix<double, kNumBones, 3> bone_angle = Eigen::Matrix<double, kNumBones, 3>::Zero();
  Eigen::Matrix<double, kNumBones, 1> bone_log_scale = Eigen::Matrix<double, kNumBones, 1>::Zero();
  Eigen::Vector3d rigid_axis_angle = Eigen::Vector3d::Zero();
  Eigen::Vector3d rigid_translation = Eigen::Vector3d::Zero();  // absolute root placement, mm

  RigidTransform rigid() const;
  bool within_bounds(double tol = 1e-12) const;
  // No bone change, no rotation, root placed at `root`.
  static GeneratorOutput identity(const Eigen::Vector3d& root);
};

struct GeneratorBatch {
  Var bone_angle;      // B x 45, bone k at columns 3k..3k+2
  Var bone_log_scale;  // B x 15
  Var rigid;           // B x 6: axis-angle then translation (mm)

  GeneratorOutput row(Eigen::Index i) const;
};

class PoseGenerator {
 public:
  PoseGenerator(int width, std::uint64_t seed);

  // poses: B x 48 root-relative mm, noise: B x 16.
  GeneratorBatch forward(const Var& poses, const Var& noise) const;
  GeneratorOutput operator()(const Pose3D& pose, const Eigen::Matrix<double, kNoiseDim, 1>& noise) const;

  // Zero the three output layers so the generator emits identity parameters.
  void zero_output_layers();

  ag::ParamSet& params() { return params_; }
  const ag::ParamSet& params() const { return params_; }
  static Eigen::Index expected_param_count(int width);

 private:
  ag::ParamSet params_;
};

class KcsDiscriminator {
 public:
  KcsDiscriminator(int dims, const ResidualBlockSpec& spec, std::uint64_t seed);

  // B x (16 * dims) -> B x 1 unbounded score.
  Var forward(const Var& poses) const;
  double operator()(const Eigen::Ref<const Eigen::MatrixXd>& pose) const;

  int dims() const { return dims_; }
  ag::ParamSet& params() { return params_; }
  const ag::ParamSet& params() const { return params_; }
  static Eigen::Index expected_param_count(int width);

 private:
  int dims_;
  ag::ParamSet params_;
};

// All five heads plus their shared configuration.
struct Model {
  NetConfig config;
  RefineNet refine;
  Lifter lifter;
  CameraBranch camera;
  PoseGenerator generator;
  KcsDiscriminator disc2d;
  KcsDiscriminator disc3d;

  // Each head is seeded from `seed` and its own index.
  Model(const NetConfig& config, std::uint64_t seed);

  // Named parameter groups in a fixed order: refine, lifter, camera,
  // generator, disc2d, disc3d.
  std::vector<std::pair<std::string, ag::ParamSet*>> groups();
  std::vector<std::pair<std::string, const ag::ParamSet*>> groups() const;

  nlohmann::json to_json() const;
  static Model from_json(const nlohmann::json& j);
  // Copies parameter values from a model with the same configuration.
  void assign(const Model& other);
  bool all_finite() const;
};

inline constexpr const char* kModelFormat = "camerapose-model";
inline constexpr int kModelVersion = 1;

void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

// Batch helpers.
ag::Matrix stack_rows(const std::vector<Eigen::RowVectorXd>& rows);

}  // namespace camerapose::nets
