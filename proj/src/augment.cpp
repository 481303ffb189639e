#include "camerapose/augment.hpp"

#include <array>
#include <cmath>
#include <random>

#include "camerapose/error.hpp"
#include "camerapose/losses.hpp"

namespace camerapose::augment {

using ag::Var;

namespace {

void check_source_bones(const Eigen::MatrixXd& bones) {
  for (Eigen::Index k = 0; k < bones.rows(); ++k) {
    if (bones.row(k).norm() < kMinSourceBoneMm) {
      throw Error(ErrorCode::DegenerateBone, "bone " + std::to_string(k) + " has length " +
                                                 std::to_string(bones.row(k).norm()) + " mm");
    }
  }
}

Pose3D rebuild(const Eigen::MatrixXd& bones, const KinematicTree& tree) {
  Pose3D out = Pose3D::Zero();
  for (int k = 0; k < tree.num_bones(); ++k) {
    const auto& b = tree.bone(k);
    out.row(b.child) = out.row(b.parent) + bones.row(k);
  }
  return out;
}

}  // namespace

Pose3D apply_bone_angle(const Pose3D& X, const BoneAngles& angles, const KinematicTree& tree) {
  const Eigen::MatrixXd bones = bone_vectors(X, tree);
  check_source_bones(bones);
  std::vector<Eigen::Matrix3d> frame(static_cast<size_t>(tree.num_joints()),
                                     Eigen::Matrix3d::Identity());
  Eigen::MatrixXd rotated(bones.rows(), 3);
  for (int k = 0; k < tree.num_bones(); ++k) {
    const auto& b = tree.bone(k);
    const Eigen::Matrix3d c =
        frame[static_cast<size_t>(b.parent)] * rotation_from_axis_angle(angles.row(k).transpose());
    frame[static_cast<size_t>(b.child)] = c;
    rotated.row(k) = (c * bones.row(k).transpose()).transpose();
  }
  Pose3D out = rebuild(rotated, tree);
  out.rowwise() += X.row(tree.root());
  return out;
}

Pose3D apply_bone_length(const Pose3D& X, const BoneLogScales& log_scales,
                         const KinematicTree& tree) {
  Eigen::MatrixXd bones = bone_vectors(X, tree);
  check_source_bones(bones);
  for (int k = 0; k < tree.num_bones(); ++k) bones.row(k) *= std::exp(log_scales(k));
  Pose3D out = rebuild(bones, tree);
  out.rowwise() += X.row(tree.root());
  return out;
}

bool AugmentedPair::valid(double tol) const {
  if (!X.allFinite() || !x.allFinite()) return false;
  const Eigen::MatrixXd bones = bone_vectors(X);
  for (Eigen::Index k = 0; k < bones.rows(); ++k) {
    if (!(bones.row(k).norm() > kMinAugmentedBoneMm)) return false;
  }
  try {
    const Pose2D reproj = project(X, K, t);
    return (reproj - x).cwiseAbs().maxCoeff() <= tol * std::max(1.0, x.cwiseAbs().maxCoeff());
  } catch (const Error&) {
    return false;
  }
}

AugmentedPair augment_pair(const data::Sample& source, const nets::GeneratorOutput& g,
                           Provenance provenance) {
  if (!source.paired()) {
    throw Error(ErrorCode::MissingCameraGroundTruth,
                "augmentation needs a paired sample, got '" + source.id + "'");
  }
  const Pose3D posed = apply_bone_length(apply_bone_angle(*source.X, g.bone_angle), g.bone_log_scale);
  const Eigen::Matrix3d R = rotation_from_axis_angle(g.rigid_axis_angle);
  AugmentedPair out;
  // Rotate about the root; the translation becomes the camera-space root.
  out.X = (posed.rowwise() - posed.row(0)) * R.transpose();
  out.K = *source.K;
  out.t = Offset3D::from_vector(g.rigid_translation);
  out.x = project(out.X, out.K, out.t);
  out.params = g;
  if (provenance.source_id.empty()) provenance.source_id = source.id;
  out.provenance = std::move(provenance);
  return out;
}

std::uint64_t noise_seed(std::uint64_t seed, const std::string& sample_id, int attempt) {
  // FNV-1a over the id, mixed with the seed and attempt by splitmix64.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : sample_id) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::uint64_t z = h ^ (seed * 0x9E3779B97F4A7C15ULL) ^ (static_cast<std::uint64_t>(attempt) << 32);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Eigen::Matrix<double, nets::kNoiseDim, 1> draw_noise(std::uint64_t noise_seed) {
  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Matrix<double, nets::kNoiseDim, 1> z;
  for (int i = 0; i < nets::kNoiseDim; ++i) z(i) = n(rng);
  return z;
}

AugmentedSet augment_dataset(const nets::PoseGenerator& gen, const std::vector<data::Sample>& paired,
                             std::uint64_t seed, int max_attempts) {
  AugmentedSet out;
  out.pairs.reserve(paired.size());
  for (const auto& s : paired) {
    bool done = false;
    for (int attempt = 0; attempt < max_attempts && !done; ++attempt) {
      ++out.stats.attempts;
      const std::uint64_t ns = noise_seed(seed, s.id, attempt);
      try {
        AugmentedPair p = augment_pair(s, gen(*s.X, draw_noise(ns)), {s.id, ns});
        if (p.valid()) {
          out.pairs.push_back(std::move(p));
          done = true;
          continue;
        }
      } catch (const Error& e) {
        if (e.code() != ErrorCode::BehindCamera) throw;
      }
      ++out.stats.rejected;
    }
    if (!done) ++out.stats.exhausted;
  }
  return out;
}

// ---------------------------------------------------------------- batched

namespace {

using Rot = std::array<Var, 9>;

struct Vec3 {
  Var x, y, z;
};

Var col(const Var& a, Eigen::Index c) { return ag::slice(a, 0, a.rows(), c, 1); }

// Stable functions of s = theta^2.
double sinc_s(double s) {
  if (s < 1e-4) return 1.0 - s / 6.0 + s * s / 120.0 - s * s * s / 5040.0;
  const double r = std::sqrt(s);
  return std::sin(r) / r;
}
double dsinc_s(double s) {
  if (s < 1e-4) return -1.0 / 6.0 + s / 60.0 - s * s / 1680.0;
  const double r = std::sqrt(s);
  return (r * std::cos(r) - std::sin(r)) / (2.0 * r * r * r);
}
double versc_s(double s) {
  if (s < 1e-4) return 0.5 - s / 24.0 + s * s / 720.0 - s * s * s / 40320.0;
  return (1.0 - std::cos(std::sqrt(s))) / s;
}
double dversc_s(double s) {
  if (s < 1e-4) return -1.0 / 24.0 + s / 360.0 - s * s / 13440.0;
  return (0.5 * sinc_s(s) - versc_s(s)) / s;
}
double cos_s(double s) { return std::cos(std::sqrt(s)); }
double dcos_s(double s) { return -0.5 * sinc_s(s); }

Rot rodrigues_cols(const Var& aa) {
  const Var vx = col(aa, 0), vy = col(aa, 1), vz = col(aa, 2);
  const Var s = square(vx) + square(vy) + square(vz);
  const Var A = ag::map(s, sinc_s, dsinc_s, "sinc");
  const Var B = ag::map(s, versc_s, dversc_s, "versc");
  const Var C = ag::map(s, cos_s, dcos_s, "cos_sqrt");
  const Var Bx = B * vx, By = B * vy;
  return {C + Bx * vx,          Bx * vy - A * vz, Bx * vz + A * vy,
          Bx * vy + A * vz,     C + By * vy,      By * vz - A * vx,
          Bx * vz - A * vy,     By * vz + A * vx, C + B * vz * vz};
}

Rot rot_mul(const Rot& a, const Rot& b) {
  Rot out;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      out[static_cast<size_t>(3 * r + c)] = a[static_cast<size_t>(3 * r)] * b[static_cast<size_t>(c)] +
                                            a[static_cast<size_t>(3 * r + 1)] * b[static_cast<size_t>(3 + c)] +
                                            a[static_cast<size_t>(3 * r + 2)] * b[static_cast<size_t>(6 + c)];
    }
  }
  return out;
}

Vec3 rot_apply(const Rot& R, const Vec3& v) {
  return {R[0] * v.x + R[1] * v.y + R[2] * v.z, R[3] * v.x + R[4] * v.y + R[5] * v.z,
          R[6] * v.x + R[7] * v.y + R[8] * v.z};
}

}  // namespace

Var rodrigues(const Var& axis_angle) {
  if (axis_angle.cols() != 3) throw Error(ErrorCode::ShapeMismatch, "rodrigues expects B x 3");
  const Rot R = rodrigues_cols(axis_angle);
  return ag::concat(std::vector<Var>(R.begin(), R.end()), 1);
}

AugmentedBatch augment_batch(const Var& poses3d, const nets::GeneratorBatch& g,
                             const ag::Matrix& intrinsics) {
  const auto n = poses3d.rows();
  if (poses3d.cols() != kNumJoints * 3 || intrinsics.rows() != n || intrinsics.cols() != 4 ||
      g.bone_angle.rows() != n) {
    throw Error(ErrorCode::ShapeMismatch, "augment_batch input shapes");
  }
  const auto& tree = KinematicTree::canonical();
  std::array<Vec3, kNumJoints> joint;
  std::array<Rot, kNumJoints> frame;
  std::array<bool, kNumJoints> has_frame{};
  const Var zero = Var::constant(ag::Matrix::Zero(n, 1));
  joint[static_cast<size_t>(tree.root())] = {zero, zero, zero};

  for (int k = 0; k < kNumBones; ++k) {
    const auto& b = tree.bone(k);
    const auto p = static_cast<size_t>(b.parent);
    const auto c = static_cast<size_t>(b.child);
    const Vec3 bone{col(poses3d, 3 * b.child) - col(poses3d, 3 * b.parent),
                    col(poses3d, 3 * b.child + 1) - col(poses3d, 3 * b.parent + 1),
                    col(poses3d, 3 * b.child + 2) - col(poses3d, 3 * b.parent + 2)};
    const Rot local = rodrigues_cols(ag::slice(g.bone_angle, 0, n, 3 * k, 3));
    frame[c] = has_frame[p] ? rot_mul(frame[p], local) : local;
    has_frame[c] = true;
    const Var stretch = ag::exp(col(g.bone_log_scale, k));
    const Vec3 r = rot_apply(frame[c], bone);
    joint[c] = {joint[p].x + stretch * r.x, joint[p].y + stretch * r.y, joint[p].z + stretch * r.z};
  }

  const Rot rigid = rodrigues_cols(ag::slice(g.rigid, 0, n, 0, 3));
  std::vector<Var> cols;
  cols.reserve(kNumJoints * 3);
  for (const auto& j : joint) {
    const Vec3 r = rot_apply(rigid, j);
    cols.push_back(r.x);
    cols.push_back(r.y);
    cols.push_back(r.z);
  }
  AugmentedBatch out;
  out.poses3d = ag::concat(cols, 1);
  out.camera = ag::concat({Var::constant(intrinsics), ag::slice(g.rigid, 0, n, 3, 3)}, 1);
  out.poses2d = losses::reproject(out.poses3d, out.camera, losses::DepthPolicy::Clamp);
  return out;
}

}  // namespace camerapose::augment
