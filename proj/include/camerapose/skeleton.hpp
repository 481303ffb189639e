#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace camerapose {

inline constexpr int kNumJoints = 16;
inline constexpr int kNumBones = kNumJoints - 1;

// Integer codes are part of the dataset file format. Never reorder.
enum class JointId : int {
  Pelvis = 0,
  RHip = 1,
  RKnee = 2,
  RAnkle = 3,
  LHip = 4,
  LKnee = 5,
  LAnkle = 6,
  Spine = 7,
  Neck = 8,
  Head = 9,
  LShoulder = 10,
  LElbow = 11,
  LWrist = 12,
  RShoulder = 13,
  RElbow = 14,
  RWrist = 15,
};

constexpr int code(JointId j) { return static_cast<int>(j); }
std::string_view joint_name(JointId j);
std::optional<JointId> joint_from_name(std::string_view name);
const std::array<JointId, kNumJoints>& all_joints();

enum class BodyPart : int { Torso = 0, LeftArm = 1, RightArm = 2, LeftLeg = 3, RightLeg = 4 };
inline constexpr int kNumParts = 5;
std::string_view part_name(BodyPart p);

using Pose2D = Eigen::Matrix<double, kNumJoints, 2>;
using Pose3D = Eigen::Matrix<double, kNumJoints, 3>;
using JointMask = std::array<bool, kNumJoints>;

// Parent table over an arbitrary joint count. Bone k connects parent(child_k)
// to child_k; bones are listed so that every parent is placed before its
// children, which lets forward kinematics run in a single pass.
class KinematicTree {
 public:
  struct Bone {
    int parent;
    int child;
    BodyPart part;
  };

  KinematicTree(int num_joints, std::vector<Bone> bones);

  // The canonical 16-joint, 15-bone tree rooted at the pelvis.
  static const KinematicTree& canonical();

  int num_joints() const { return num_joints_; }
  int num_bones() const { return static_cast<int>(bones_.size()); }
  const std::vector<Bone>& bones() const { return bones_; }
  const Bone& bone(int k) const { return bones_.at(static_cast<size_t>(k)); }
  int root() const { return root_; }
  // Bone indices carrying the given part label, ascending.
  const std::vector<int>& part_bones(BodyPart p) const {
    return part_bones_[static_cast<size_t>(p)];
  }

 private:
  int num_joints_;
  int root_ = 0;
  std::vector<Bone> bones_;
  std::array<std::vector<int>, kNumParts> part_bones_;
};

// Rows are joints, columns are coordinates (2 or 3).
Eigen::MatrixXd bone_vectors(const Eigen::Ref<const Eigen::MatrixXd>& pose,
                             const KinematicTree& tree = KinematicTree::canonical());

struct KcsMatrix {
  Eigen::MatrixXd full;                 // bones x bones Gram matrix
  std::array<Eigen::MatrixXd, kNumParts> parts;  // one block per body part
};

KcsMatrix kcs(const Eigen::Ref<const Eigen::MatrixXd>& pose,
              const KinematicTree& tree = KinematicTree::canonical());

// Source-format tags understood by convert_external_joints.
enum class JointScheme { Canonical, Mpii, Coco };
std::optional<JointScheme> scheme_from_name(std::string_view name);

struct ConvertedJoints {
  Pose2D pose = Pose2D::Zero();
  JointMask valid{};
};

// Maps a named point set from another annotation scheme onto the canonical
// joints. Pelvis, Neck and Spine are interpolated when absent; anything else
// missing stays masked. See docs/joint_formats.md for the full table.
ConvertedJoints convert_external_joints(const std::map<std::string, Eigen::Vector2d>& joints,
                                        JointScheme scheme);

// Joint-major flattening used for network inputs: [x0, y0, (z0,) x1, ...].
Eigen::RowVectorXd flatten_pose(const Eigen::Ref<const Eigen::MatrixXd>& pose);
Pose2D pose2d_from_row(const Eigen::Ref<const Eigen::RowVectorXd>& row);
Pose3D pose3d_from_row(const Eigen::Ref<const Eigen::RowVectorXd>& row);

Pose2D normalize_2d(const Pose2D& pixels, double width, double height);
Pose2D denormalize_2d(const Pose2D& normalized, double width, double height);

}  // namespace camerapose
