#include "camerapose/nets.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "camerapose/error.hpp"

namespace camerapose::nets {

namespace {

constexpr double kKcsScale3d = 1e-6;  // mm^2 -> m^2
constexpr double kKcsScale2d = 10.0;
constexpr double kMinRefineRadius = 1e-6;  // normalized units

void check_cols(const Var& x, Eigen::Index cols, const char* what) {
  if (x.cols() != cols) {
    throw Error(ErrorCode::ShapeMismatch, std::string(what) + " expects " +
                                              std::to_string(cols) + " columns, got " +
                                              std::to_string(x.cols()));
  }
}

ag::Matrix constant_rows(Eigen::Index rows, const Eigen::RowVectorXd& row) {
  return row.replicate(rows, 1);
}

}  // namespace

nlohmann::json NetConfig::to_json() const {
  return {{"refine_width", refine_width},
          {"lifter_width", lifter_width},
          {"camera_width", camera_width},
          {"generator_width", generator_width},
          {"discriminator_width", discriminator_width},
          {"lifter_output_scale_mm", lifter_output_scale_mm}};
}

NetConfig NetConfig::from_json(const nlohmann::json& j) {
  NetConfig c;
  c.refine_width = j.value("refine_width", c.refine_width);
  c.lifter_width = j.value("lifter_width", c.lifter_width);
  c.camera_width = j.value("camera_width", c.camera_width);
  c.generator_width = j.value("generator_width", c.generator_width);
  c.discriminator_width = j.value("discriminator_width", c.discriminator_width);
  c.lifter_output_scale_mm = j.value("lifter_output_scale_mm", c.lifter_output_scale_mm);
  return c;
}

void add_linear(ag::ParamSet& params, const std::string& name, Eigen::Index in, Eigen::Index out,
                ag::Matrix weight) {
  if (weight.rows() != in || weight.cols() != out) {
    throw Error(ErrorCode::ShapeMismatch, "initializer shape for " + name);
  }
  params.add(name + ".W", std::move(weight));
  params.add(name + ".b", ag::Matrix::Zero(1, out));
}

Var linear(const ag::ParamSet& params, const std::string& name, const Var& x) {
  return matmul(x, params.get(name + ".W")) + params.get(name + ".b");
}

void add_residual_block(ag::ParamSet& params, const std::string& name, ResidualBlockSpec spec,
                        std::mt19937_64& rng) {
  add_linear(params, name + ".fc1", spec.width, spec.width,
             ag::kaiming_uniform(spec.width, spec.width, rng));
  add_linear(params, name + ".fc2", spec.width, spec.width,
             ag::kaiming_uniform(spec.width, spec.width, rng));
}

Var residual_block(const ag::ParamSet& params, const std::string& name, const Var& x) {
  Var h = relu(linear(params, name + ".fc1", x));
  return x + relu(linear(params, name + ".fc2", h));
}

namespace {

struct KcsLayout {
  ag::Matrix bone_incidence;  // (16 d) x (15 d)
  std::array<std::vector<int>, kNumParts> left, right;
  std::array<ag::Matrix, kNumParts> group_sum;
};

KcsLayout make_kcs_layout(int d) {
  const auto& tree = KinematicTree::canonical();
  KcsLayout layout;
  layout.bone_incidence = ag::Matrix::Zero(kNumJoints * d, kNumBones * d);
  for (int k = 0; k < kNumBones; ++k) {
    for (int c = 0; c < d; ++c) {
      layout.bone_incidence(tree.bone(k).child * d + c, k * d + c) = 1.0;
      layout.bone_incidence(tree.bone(k).parent * d + c, k * d + c) = -1.0;
    }
  }
  for (int p = 0; p < kNumParts; ++p) {
    const auto& bones = tree.part_bones(static_cast<BodyPart>(p));
    auto& left = layout.left[static_cast<size_t>(p)];
    auto& right = layout.right[static_cast<size_t>(p)];
    int pairs = 0;
    for (size_t a = 0; a < bones.size(); ++a) {
      for (size_t b = a; b < bones.size(); ++b) {
        for (int c = 0; c < d; ++c) {
          left.push_back(bones[a] * d + c);
          right.push_back(bones[b] * d + c);
        }
        ++pairs;
      }
    }
    ag::Matrix sum = ag::Matrix::Zero(pairs * d, pairs);
    for (int q = 0; q < pairs; ++q) sum.block(q * d, q, d, 1).setOnes();
    layout.group_sum[static_cast<size_t>(p)] = std::move(sum);
  }
  return layout;
}

const KcsLayout& kcs_layout(int d) {
  static const KcsLayout two = make_kcs_layout(2);
  static const KcsLayout three = make_kcs_layout(3);
  if (d == 2) return two;
  if (d == 3) return three;
  throw Error(ErrorCode::ShapeMismatch, "KCS needs 2 or 3 coordinates per joint");
}

}  // namespace

std::array<Var, kNumParts> kcs_features(const Var& poses, int dims) {
  const auto& layout = kcs_layout(dims);
  check_cols(poses, kNumJoints * dims, "kcs_features");
  const double s = dims == 3 ? kKcsScale3d : kKcsScale2d;
  const Var bones = matmul(poses, Var::constant(layout.bone_incidence));
  std::array<Var, kNumParts> out;
  for (size_t p = 0; p < kNumParts; ++p) {
    const Var prod = gather_cols(bones, layout.left[p]) * gather_cols(bones, layout.right[p]);
    out[p] = scale(matmul(prod, Var::constant(layout.group_sum[p])), s);
  }
  return out;
}

int kcs_feature_width(BodyPart part) {
  const auto n = static_cast<int>(KinematicTree::canonical().part_bones(part).size());
  return n * (n + 1) / 2;
}

// ---------------------------------------------------------------- RefineNet

RefineNet::RefineNet(const ResidualBlockSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int in = kNumJoints * 3;
  add_linear(params_, "entry", in, spec.width, ag::kaiming_uniform(in, spec.width, rng));
  add_residual_block(params_, "block0", spec, rng);
  // Zero exit: an untrained RefineNet is the identity.
  add_linear(params_, "exit", spec.width, kNumJoints * 2, ag::Matrix::Zero(spec.width, kNumJoints * 2));
}

Var RefineNet::forward(const Var& coords, const Var& conf_norm) const {
  check_cols(coords, kNumJoints * 2, "RefineNet coords");
  check_cols(conf_norm, kNumJoints, "RefineNet confidence");
  if (coords.rows() != conf_norm.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "RefineNet batch sizes differ");
  }
  // The network sees the pose centred and scaled to unit RMS radius and its
  // delta is mapped back, so refinement commutes with translation and scale.
  static const auto frames = [] {
    struct {
      ag::Matrix mean, spread, ones_row, ones_col;
    } f{ag::Matrix::Zero(kNumJoints * 2, 2), ag::Matrix::Zero(2, kNumJoints * 2),
        ag::Matrix::Ones(1, kNumJoints * 2), ag::Matrix::Constant(kNumJoints * 2, 1, 1.0 / kNumJoints)};
    for (int j = 0; j < kNumJoints; ++j) {
      for (int c = 0; c < 2; ++c) {
        f.mean(2 * j + c, c) = 1.0 / kNumJoints;
        f.spread(c, 2 * j + c) = 1.0;
      }
    }
    return f;
  }();
  const Var centred = coords - matmul(matmul(coords, Var::constant(frames.mean)), Var::constant(frames.spread));
  const Var radius = ag::sqrt(
      add_scalar(matmul(square(centred), Var::constant(frames.ones_col)), kMinRefineRadius * kMinRefineRadius));
  const Var ones = Var::constant(frames.ones_row);
  const Var unit = centred * matmul(ag::reciprocal(radius, kMinRefineRadius), ones);
  // Normalized confidences sum to one; rescale so a uniform vector reads as ones.
  const Var input = ag::concat({unit, scale(conf_norm, kNumJoints)}, 1);
  Var h = relu(linear(params_, "entry", input));
  h = residual_block(params_, "block0", h);
  return coords + linear(params_, "exit", h) * matmul(radius, ones);
}

Pose2D RefineNet::operator()(const Pose2D& coords, const ConfVector& conf_norm) const {
  const Var out = forward(Var::constant(flatten_pose(coords)),
                          Var::constant(conf_norm.transpose()));
  return pose2d_from_row(out.value().row(0));
}

Eigen::Index RefineNet::expected_param_count(int width) {
  const Eigen::Index w = width;
  return (48 * w + w) + 2 * (w * w + w) + (w * 32 + 32);
}

// ---------------------------------------------------------------- Lifter

Lifter::Lifter(const ResidualBlockSpec& spec, double output_scale_mm, std::uint64_t seed)
    : output_scale_mm_(output_scale_mm) {
  std::mt19937_64 rng(seed);
  const int in = kNumJoints * 2;
  const int out = kNumBones * 3;
  add_linear(params_, "entry", in, spec.width, ag::kaiming_uniform(in, spec.width, rng));
  add_residual_block(params_, "block0", spec, rng);
  add_residual_block(params_, "block1", spec, rng);
  add_linear(params_, "exit", spec.width, out, ag::xavier_uniform(spec.width, out, rng));
}

Var Lifter::forward(const Var& coords) const {
  check_cols(coords, kNumJoints * 2, "Lifter");
  Var h = relu(linear(params_, "entry", coords));
  h = residual_block(params_, "block0", h);
  h = residual_block(params_, "block1", h);
  const Var joints = scale(linear(params_, "exit", h), output_scale_mm_);
  return ag::concat({Var::constant(ag::Matrix::Zero(coords.rows(), 3)), joints}, 1);
}

Pose3D Lifter::operator()(const Pose2D& coords) const {
  return pose3d_from_row(forward(Var::constant(flatten_pose(coords))).value().row(0));
}

Eigen::Index Lifter::expected_param_count(int width) {
  const Eigen::Index w = width;
  return (32 * w + w) + 4 * (w * w + w) + (w * 45 + 45);
}

// ---------------------------------------------------------------- CameraBranch

CameraBranch::CameraBranch(const ResidualBlockSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int in = kNumJoints * 2;
  add_linear(params_, "entry", in, spec.width, ag::kaiming_uniform(in, spec.width, rng));
  add_residual_block(params_, "block0", spec, rng);
  add_residual_block(params_, "block1", spec, rng);
  add_linear(params_, "exit", spec.width, kCameraColumns,
             ag::xavier_uniform(spec.width, kCameraColumns, rng));
}

Var CameraBranch::forward(const Var& coords) const {
  check_cols(coords, kNumJoints * 2, "CameraBranch");
  Var h = relu(linear(params_, "entry", coords));
  h = residual_block(params_, "block0", h);
  h = residual_block(params_, "block1", h);
  const Var raw = linear(params_, "exit", h);
  const auto n = raw.rows();
  const Var focal = softplus(slice(raw, 0, n, kFx, 2)) + kMinFocal;
  const Var principal = slice(raw, 0, n, kCx, 2);
  const Var shift = scale(slice(raw, 0, n, kTx, 2), kCameraTranslationScaleMm);
  const Var depth = scale(sigmoid(slice(raw, 0, n, kTz, 1)),
                          kMaxDepthOffsetMm - kMinDepthOffsetMm) +
                    kMinDepthOffsetMm;
  return ag::concat({focal, principal, shift, depth}, 1);
}

std::pair<CameraIntrinsics, Offset3D> CameraBranch::operator()(const Pose2D& coords) const {
  const auto row = forward(Var::constant(flatten_pose(coords))).value().row(0).eval();
  return {CameraIntrinsics{row(kFx), row(kFy), row(kCx), row(kCy)},
          Offset3D{row(kTx), row(kTy), row(kTz)}};
}

Eigen::Index CameraBranch::expected_param_count(int width) {
  const Eigen::Index w = width;
  return (32 * w + w) + 4 * (w * w + w) + (w * 7 + 7);
}

// ---------------------------------------------------------------- Generator

RigidTransform GeneratorOutput::rigid() const {
  return RigidTransform{rotation_from_axis_angle(rigid_axis_angle), rigid_translation};
}

bool GeneratorOutput::within_bounds(double tol) const {
  for (int k = 0; k < kNumBones; ++k) {
    if (bone_angle.row(k).norm() > kMaxBoneAngle + tol) return false;
    if (std::abs(bone_log_scale(k)) > kMaxLogScale + tol) return false;
  }
  return rigid_axis_angle.norm() <= kMaxRigidAngle + tol &&
         std::abs(rigid_translation.x()) <= kMaxRigidShiftMm + tol &&
         std::abs(rigid_translation.y()) <= kMaxRigidShiftMm + tol &&
         rigid_translation.z() >= kMinRigidDepthMm - tol &&
         rigid_translation.z() <= kMaxRigidDepthMm + tol;
}

GeneratorOutput GeneratorOutput::identity(const Eigen::Vector3d& root) {
  GeneratorOutput g;
  g.rigid_translation = root;
  return g;
}

GeneratorOutput GeneratorBatch::row(Eigen::Index i) const {
  GeneratorOutput g;
  for (int k = 0; k < kNumBones; ++k) {
    for (int c = 0; c < 3; ++c) g.bone_angle(k, c) = bone_angle.value()(i, 3 * k + c);
    g.bone_log_scale(k) = bone_log_scale.value()(i, k);
  }
  for (int c = 0; c < 3; ++c) {
    g.rigid_axis_angle(c) = rigid.value()(i, c);
    g.rigid_translation(c) = rigid.value()(i, 3 + c);
  }
  return g;
}

namespace {
const char* kGeneratorHeads[3] = {"angle", "length", "rigid"};
constexpr int kGeneratorOut[3] = {kNumBones * 3, kNumBones, 6};
}  // namespace

PoseGenerator::PoseGenerator(int width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int in = kNumJoints * 3 + kNoiseDim;
  for (int h = 0; h < 3; ++h) {
    const std::string name = kGeneratorHeads[h];
    add_linear(params_, name + ".hidden", in, width, ag::kaiming_uniform(in, width, rng));
    add_linear(params_, name + ".out", width, kGeneratorOut[h],
               ag::xavier_uniform(width, kGeneratorOut[h], rng));
  }
}

GeneratorBatch PoseGenerator::forward(const Var& poses, const Var& noise) const {
  check_cols(poses, kNumJoints * 3, "PoseGenerator poses");
  check_cols(noise, kNoiseDim, "PoseGenerator noise");
  const Var input = ag::concat({scale(poses, 1e-3), noise}, 1);
  auto head = [&](int h) {
    const std::string name = kGeneratorHeads[h];
    return tanh(linear(params_, name + ".out", relu(linear(params_, name + ".hidden", input))));
  };
  const auto n = poses.rows();
  const double per_component = 1.0 / std::sqrt(3.0);

  GeneratorBatch out;
  out.bone_angle = scale(head(0), kMaxBoneAngle * per_component);
  out.bone_log_scale = scale(head(1), kMaxLogScale);

  Eigen::RowVectorXd gain(6), offset(6);
  const double rot = kMaxRigidAngle * per_component;
  const double mid_depth = 0.5 * (kMinRigidDepthMm + kMaxRigidDepthMm);
  gain << rot, rot, rot, kMaxRigidShiftMm, kMaxRigidShiftMm, kMaxRigidDepthMm - mid_depth;
  offset << 0, 0, 0, 0, 0, mid_depth;
  out.rigid = head(2) * Var::constant(constant_rows(n, gain)) + Var::constant(offset);
  return out;
}

GeneratorOutput PoseGenerator::operator()(const Pose3D& pose,
                                          const Eigen::Matrix<double, kNoiseDim, 1>& noise) const {
  return forward(Var::constant(flatten_pose(pose)), Var::constant(noise.transpose())).row(0);
}

void PoseGenerator::zero_output_layers() {
  for (const char* name : kGeneratorHeads) {
    params_.get(std::string(name) + ".out.W").mutable_value().setZero();
    params_.get(std::string(name) + ".out.b").mutable_value().setZero();
  }
}

Eigen::Index PoseGenerator::expected_param_count(int width) {
  const Eigen::Index w = width;
  const Eigen::Index in = 64;
  Eigen::Index n = 0;
  for (int out : kGeneratorOut) n += (in * w + w) + (w * out + out);
  return n;
}

// ---------------------------------------------------------------- Discriminator

KcsDiscriminator::KcsDiscriminator(int dims, const ResidualBlockSpec& spec, std::uint64_t seed)
    : dims_(dims) {
  if (dims != 2 && dims != 3) throw Error(ErrorCode::ShapeMismatch, "discriminator dims");
  std::mt19937_64 rng(seed);
  for (int p = 0; p < kNumParts; ++p) {
    const std::string name = "part" + std::to_string(p);
    const int in = kcs_feature_width(static_cast<BodyPart>(p));
    add_linear(params_, name + ".entry", in, spec.width, ag::kaiming_uniform(in, spec.width, rng));
    add_residual_block(params_, name + ".block0", spec, rng);
  }
  add_linear(params_, "head", kNumParts * spec.width, 1,
             ag::xavier_uniform(kNumParts * spec.width, 1, rng));
}

Var KcsDiscriminator::forward(const Var& poses) const {
  const auto features = kcs_features(poses, dims_);
  std::vector<Var> trunks;
  for (int p = 0; p < kNumParts; ++p) {
    const std::string name = "part" + std::to_string(p);
    Var h = relu(linear(params_, name + ".entry", features[static_cast<size_t>(p)]));
    trunks.push_back(residual_block(params_, name + ".block0", h));
  }
  return linear(params_, "head", concat(trunks, 1));
}

double KcsDiscriminator::operator()(const Eigen::Ref<const Eigen::MatrixXd>& pose) const {
  return forward(Var::constant(flatten_pose(pose))).value()(0, 0);
}

Eigen::Index KcsDiscriminator::expected_param_count(int width) {
  const Eigen::Index w = width;
  Eigen::Index n = 0;
  for (int p = 0; p < kNumParts; ++p) {
    n += (kcs_feature_width(static_cast<BodyPart>(p)) * w + w) + 2 * (w * w + w);
  }
  return n + (kNumParts * w + 1);
}

// ---------------------------------------------------------------- Model

Model::Model(const NetConfig& cfg, std::uint64_t seed)
    : config(cfg),
      refine({cfg.refine_width}, seed * 8 + 1),
      lifter({cfg.lifter_width}, cfg.lifter_output_scale_mm, seed * 8 + 2),
      camera({cfg.camera_width}, seed * 8 + 3),
      generator(cfg.generator_width, seed * 8 + 4),
      disc2d(2, {cfg.discriminator_width}, seed * 8 + 5),
      disc3d(3, {cfg.discriminator_width}, seed * 8 + 6) {}

std::vector<std::pair<std::string, ag::ParamSet*>> Model::groups() {
  return {{"refine", &refine.params()},       {"lifter", &lifter.params()},
          {"camera", &camera.params()},       {"generator", &generator.params()},
          {"disc2d", &disc2d.params()},       {"disc3d", &disc3d.params()}};
}

std::vector<std::pair<std::string, const ag::ParamSet*>> Model::groups() const {
  return {{"refine", &refine.params()},       {"lifter", &lifter.params()},
          {"camera", &camera.params()},       {"generator", &generator.params()},
          {"disc2d", &disc2d.params()},       {"disc3d", &disc3d.params()}};
}

nlohmann::json Model::to_json() const {
  nlohmann::json j = {{"format", kModelFormat}, {"version", kModelVersion}, {"nets", config.to_json()}};
  for (const auto& [name, params] : groups()) j[name] = params->to_json();
  return j;
}

Model Model::from_json(const nlohmann::json& j) {
  if (j.value("format", std::string()) != kModelFormat || j.value("version", 0) != kModelVersion) {
    throw Error(ErrorCode::ParseError, "not a camerapose model file");
  }
  Model m(NetConfig::from_json(j.at("nets")), 0);
  for (auto& [name, params] : m.groups()) params->load_json(j.at(name));
  return m;
}

void Model::assign(const Model& other) {
  auto mine = groups();
  auto theirs = other.groups();
  for (size_t i = 0; i < mine.size(); ++i) mine[i].second->assign(*theirs[i].second);
}

bool Model::all_finite() const {
  for (const auto& [name, params] : groups()) {
    if (!params->all_finite()) return false;
  }
  return true;
}

void save_model(const Model& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path + " for writing");
  out << model.to_json().dump() << '\n';
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path);
}

Model load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path + ": " + e.what());
  }
  return Model::from_json(j);
}

ag::Matrix stack_rows(const std::vector<Eigen::RowVectorXd>& rows) {
  if (rows.empty()) return {};
  ag::Matrix m(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i];
  return m;
}

}  // namespace camerapose::nets
