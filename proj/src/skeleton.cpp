#include "camerapose/skeleton.hpp"

#include <unordered_map>

#include "camerapose/error.hpp"

namespace camerapose {

namespace {

constexpr std::array<std::string_view, kNumJoints> kJointNames = {
    "Pelvis", "RHip",  "RKnee", "RAnkle",    "LHip",   "LKnee",  "LAnkle",    "Spine",
    "Neck",   "Head",  "LShoulder", "LElbow", "LWrist", "RShoulder", "RElbow", "RWrist",
};

KinematicTree make_canonical() {
  using J = JointId;
  using P = BodyPart;
  auto b = [](J parent, J child, P part) {
    return KinematicTree::Bone{code(parent), code(child), part};
  };
  // Bone k has child code k + 1.
  return KinematicTree(kNumJoints, {
                                       b(J::Pelvis, J::RHip, P::Torso),
                                       b(J::RHip, J::RKnee, P::RightLeg),
                                       b(J::RKnee, J::RAnkle, P::RightLeg),
                                       b(J::Pelvis, J::LHip, P::Torso),
                                       b(J::LHip, J::LKnee, P::LeftLeg),
                                       b(J::LKnee, J::LAnkle, P::LeftLeg),
                                       b(J::Pelvis, J::Spine, P::Torso),
                                       b(J::Spine, J::Neck, P::Torso),
                                       b(J::Neck, J::Head, P::Torso),
                                       b(J::Neck, J::LShoulder, P::Torso),
                                       b(J::LShoulder, J::LElbow, P::LeftArm),
                                       b(J::LElbow, J::LWrist, P::LeftArm),
                                       b(J::Neck, J::RShoulder, P::Torso),
                                       b(J::RShoulder, J::RElbow, P::RightArm),
                                       b(J::RElbow, J::RWrist, P::RightArm),
                                   });
}

}  // namespace

std::string_view joint_name(JointId j) { return kJointNames[static_cast<size_t>(code(j))]; }

std::optional<JointId> joint_from_name(std::string_view name) {
  for (size_t i = 0; i < kJointNames.size(); ++i) {
    if (kJointNames[i] == name) return static_cast<JointId>(i);
  }
  return std::nullopt;
}

const std::array<JointId, kNumJoints>& all_joints() {
  static const std::array<JointId, kNumJoints> joints = [] {
    std::array<JointId, kNumJoints> out{};
    for (int i = 0; i < kNumJoints; ++i) out[static_cast<size_t>(i)] = static_cast<JointId>(i);
    return out;
  }();
  return joints;
}

std::string_view part_name(BodyPart p) {
  switch (p) {
    case BodyPart::Torso: return "torso";
    case BodyPart::LeftArm: return "left-arm";
    case BodyPart::RightArm: return "right-arm";
    case BodyPart::LeftLeg: return "left-leg";
    case BodyPart::RightLeg: return "right-leg";
  }
  return "unknown";
}

KinematicTree::KinematicTree(int num_joints, std::vector<Bone> bones)
    : num_joints_(num_joints), bones_(std::move(bones)) {
  if (num_joints_ < 1 || static_cast<int>(bones_.size()) != num_joints_ - 1) {
    throw Error(ErrorCode::InvariantViolation, "a tree over N joints needs N-1 bones");
  }
  std::vector<int> parent(static_cast<size_t>(num_joints_), -1);
  std::vector<bool> placed(static_cast<size_t>(num_joints_), false);
  for (const auto& bone : bones_) {
    if (bone.child < 0 || bone.child >= num_joints_ || bone.parent < 0 ||
        bone.parent >= num_joints_ || parent[static_cast<size_t>(bone.child)] != -1) {
      throw Error(ErrorCode::InvariantViolation, "malformed bone list");
    }
    parent[static_cast<size_t>(bone.child)] = bone.parent;
  }
  int roots = 0;
  for (int j = 0; j < num_joints_; ++j) {
    if (parent[static_cast<size_t>(j)] == -1) {
      root_ = j;
      ++roots;
    }
  }
  if (roots != 1) throw Error(ErrorCode::InvariantViolation, "tree must have a single root");
  placed[static_cast<size_t>(root_)] = true;
  for (const auto& bone : bones_) {
    if (!placed[static_cast<size_t>(bone.parent)]) {
      throw Error(ErrorCode::InvariantViolation, "bones must be listed parent-first");
    }
    placed[static_cast<size_t>(bone.child)] = true;
  }
  for (int k = 0; k < num_bones(); ++k) {
    part_bones_[static_cast<size_t>(bones_[static_cast<size_t>(k)].part)].push_back(k);
  }
}

const KinematicTree& KinematicTree::canonical() {
  static const KinematicTree tree = make_canonical();
  return tree;
}

Eigen::MatrixXd bone_vectors(const Eigen::Ref<const Eigen::MatrixXd>& pose,
                             const KinematicTree& tree) {
  if (pose.rows() != tree.num_joints()) {
    throw Error(ErrorCode::ShapeMismatch, "pose has " + std::to_string(pose.rows()) +
                                              " joints, tree expects " +
                                              std::to_string(tree.num_joints()));
  }
  Eigen::MatrixXd bones(tree.num_bones(), pose.cols());
  for (int k = 0; k < tree.num_bones(); ++k) {
    const auto& b = tree.bone(k);
    bones.row(k) = pose.row(b.child) - pose.row(b.parent);
  }
  return bones;
}

KcsMatrix kcs(const Eigen::Ref<const Eigen::MatrixXd>& pose, const KinematicTree& tree) {
  const Eigen::MatrixXd bones = bone_vectors(pose, tree);
  KcsMatrix out;
  out.full = bones * bones.transpose();
  for (int p = 0; p < kNumParts; ++p) {
    const auto& idx = tree.part_bones(static_cast<BodyPart>(p));
    const auto n = static_cast<Eigen::Index>(idx.size());
    Eigen::MatrixXd block(n, n);
    for (Eigen::Index a = 0; a < n; ++a) {
      for (Eigen::Index b = 0; b < n; ++b) {
        block(a, b) = out.full(idx[static_cast<size_t>(a)], idx[static_cast<size_t>(b)]);
      }
    }
    out.parts[static_cast<size_t>(p)] = std::move(block);
  }
  return out;
}

std::optional<JointScheme> scheme_from_name(std::string_view name) {
  if (name == "canonical" || name == "h36m") return JointScheme::Canonical;
  if (name == "mpii") return JointScheme::Mpii;
  if (name == "coco") return JointScheme::Coco;
  return std::nullopt;
}

namespace {

using NameTable = std::unordered_map<std::string, JointId>;

const NameTable& name_table(JointScheme scheme) {
  using J = JointId;
  static const NameTable canonical = [] {
    NameTable t;
    for (auto j : all_joints()) t.emplace(std::string(joint_name(j)), j);
    return t;
  }();
  // upper_neck has no canonical counterpart and is dropped; thorax is where
  // the shoulders attach, which is our Neck.
  static const NameTable mpii = {
      {"r_ankle", J::RAnkle},     {"r_knee", J::RKnee},       {"r_hip", J::RHip},
      {"l_hip", J::LHip},         {"l_knee", J::LKnee},       {"l_ankle", J::LAnkle},
      {"pelvis", J::Pelvis},      {"thorax", J::Neck},        {"head_top", J::Head},
      {"r_wrist", J::RWrist},     {"r_elbow", J::RElbow},     {"r_shoulder", J::RShoulder},
      {"l_shoulder", J::LShoulder}, {"l_elbow", J::LElbow},   {"l_wrist", J::LWrist},
  };
  // Face keypoints (nose, eyes, ears) are dropped; COCO has no head-top.
  static const NameTable coco = {
      {"left_shoulder", J::LShoulder}, {"right_shoulder", J::RShoulder},
      {"left_elbow", J::LElbow},       {"right_elbow", J::RElbow},
      {"left_wrist", J::LWrist},       {"right_wrist", J::RWrist},
      {"left_hip", J::LHip},           {"right_hip", J::RHip},
      {"left_knee", J::LKnee},         {"right_knee", J::RKnee},
      {"left_ankle", J::LAnkle},       {"right_ankle", J::RAnkle},
  };
  switch (scheme) {
    case JointScheme::Canonical: return canonical;
    case JointScheme::Mpii: return mpii;
    case JointScheme::Coco: return coco;
  }
  return canonical;
}

}  // namespace

ConvertedJoints convert_external_joints(const std::map<std::string, Eigen::Vector2d>& joints,
                                        JointScheme scheme) {
  const auto& table = name_table(scheme);
  ConvertedJoints out;
  for (const auto& [name, point] : joints) {
    auto it = table.find(name);
    if (it == table.end()) continue;
    const int j = code(it->second);
    out.pose.row(j) = point.transpose();
    out.valid[static_cast<size_t>(j)] = true;
  }
  auto has = [&](JointId j) { return out.valid[static_cast<size_t>(code(j))]; };
  for (auto j : {JointId::LHip, JointId::RHip, JointId::LShoulder, JointId::RShoulder}) {
    if (!has(j)) {
      throw Error(ErrorCode::MissingRequiredJoints,
                  "source lacks " + std::string(joint_name(j)));
    }
  }
  auto midpoint = [&](JointId target, JointId a, JointId b) {
    if (has(target)) return;
    out.pose.row(code(target)) = 0.5 * (out.pose.row(code(a)) + out.pose.row(code(b)));
    out.valid[static_cast<size_t>(code(target))] = true;
  };
  // Order matters: Spine depends on both Pelvis and Neck.
  midpoint(JointId::Pelvis, JointId::LHip, JointId::RHip);
  midpoint(JointId::Neck, JointId::LShoulder, JointId::RShoulder);
  midpoint(JointId::Spine, JointId::Pelvis, JointId::Neck);
  return out;
}

Eigen::RowVectorXd flatten_pose(const Eigen::Ref<const Eigen::MatrixXd>& pose) {
  Eigen::RowVectorXd row(pose.size());
  for (Eigen::Index j = 0; j < pose.rows(); ++j) {
    for (Eigen::Index c = 0; c < pose.cols(); ++c) row(j * pose.cols() + c) = pose(j, c);
  }
  return row;
}

namespace {
template <int D>
Eigen::Matrix<double, kNumJoints, D> from_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  if (row.size() != kNumJoints * D) {
    throw Error(ErrorCode::ShapeMismatch, "expected " + std::to_string(kNumJoints * D) +
                                              " values, got " + std::to_string(row.size()));
  }
  Eigen::Matrix<double, kNumJoints, D> pose;
  for (int j = 0; j < kNumJoints; ++j) {
    for (int c = 0; c < D; ++c) pose(j, c) = row(j * D + c);
  }
  return pose;
}
}  // namespace

Pose2D pose2d_from_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) { return from_row<2>(row); }
Pose3D pose3d_from_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) { return from_row<3>(row); }

namespace {
void check_dims(double width, double height) {
  if (!(width > 0.0) || !(height > 0.0)) {
    throw Error(ErrorCode::InvalidImageDims, "image dimensions must be positive, got " +
                                                 std::to_string(width) + "x" +
                                                 std::to_string(height));
  }
}
}  // namespace

Pose2D normalize_2d(const Pose2D& pixels, double width, double height) {
  check_dims(width, height);
  Pose2D out;
  out.col(0) = (2.0 / width) * pixels.col(0).array() - 1.0;
  out.col(1) = (2.0 / height) * pixels.col(1).array() - 1.0;
  return out;
}

Pose2D denormalize_2d(const Pose2D& normalized, double width, double height) {
  check_dims(width, height);
  Pose2D out;
  out.col(0) = (normalized.col(0).array() + 1.0) * (0.5 * width);
  out.col(1) = (normalized.col(1).array() + 1.0) * (0.5 * height);
  return out;
}

}  // namespace camerapose
