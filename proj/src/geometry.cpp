#include "camerapose/geometry.hpp"

#include <cmath>

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "camerapose/error.hpp"

namespace camerapose {

bool CameraIntrinsics::valid() const {
  return std::isfinite(fx) && std::isfinite(fy) && std::isfinite(cx) && std::isfinite(cy) &&
         fx > 0.0 && fy > 0.0;
}

bool RigidTransform::valid(double tol) const {
  const double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).norm();
  return ortho <= tol && std::abs(rotation.determinant() - 1.0) <= tol &&
         translation.allFinite();
}

Eigen::Matrix3d rotation_from_axis_angle(const Eigen::Vector3d& axis_angle) {
  const double theta = axis_angle.norm();
  if (theta == 0.0) return Eigen::Matrix3d::Identity();
  return Eigen::AngleAxisd(theta, axis_angle / theta).toRotationMatrix();
}

Eigen::MatrixX2d project(const Eigen::Ref<const Eigen::MatrixX3d>& pose, const CameraIntrinsics& K,
                         const Offset3D& t) {
  Eigen::MatrixX2d out(pose.rows(), 2);
  for (Eigen::Index j = 0; j < pose.rows(); ++j) {
    const double depth = pose(j, 2) + t.tz;
    if (!(depth > kMinDepthMm)) {
      throw Error(ErrorCode::BehindCamera,
                  "joint " + std::to_string(j) + " at depth " + std::to_string(depth) + " mm");
    }
    out(j, 0) = K.fx * (pose(j, 0) + t.tx) / depth + K.cx;
    out(j, 1) = K.fy * (pose(j, 1) + t.ty) / depth + K.cy;
  }
  return out;
}

Eigen::MatrixX3d apply_rigid(const Eigen::Ref<const Eigen::MatrixX3d>& pose,
                             const RigidTransform& T) {
  Eigen::MatrixX3d out = pose * T.rotation.transpose();
  out.rowwise() += T.translation.transpose();
  return out;
}

ProcrustesResult procrustes_align(const Eigen::Ref<const Eigen::MatrixX3d>& pred,
                                  const Eigen::Ref<const Eigen::MatrixX3d>& gt) {
  if (pred.rows() != gt.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "procrustes needs equal joint counts");
  }
  const auto n = static_cast<double>(pred.rows());
  const Eigen::RowVector3d mu_pred = pred.colwise().mean();
  const Eigen::RowVector3d mu_gt = gt.colwise().mean();
  const Eigen::MatrixX3d p = pred.rowwise() - mu_pred;
  const Eigen::MatrixX3d g = gt.rowwise() - mu_gt;

  const Eigen::Matrix3d cov = g.transpose() * p / n;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d sv = svd.singularValues();
  const double var_pred = p.squaredNorm() / n;
  if (!(sv(0) > 0.0) || sv(1) <= 1e-12 * sv(0) || !(var_pred > 0.0)) {
    throw Error(ErrorCode::DegenerateConfiguration,
                "cross-covariance rank < 2 (collinear or coincident joints)");
  }

  Eigen::Vector3d sign = Eigen::Vector3d::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) sign(2) = -1.0;

  ProcrustesResult out;
  out.rotation = svd.matrixU() * sign.asDiagonal() * svd.matrixV().transpose();
  out.scale = sv.dot(sign) / var_pred;
  out.translation = mu_gt.transpose() - out.scale * out.rotation * mu_pred.transpose();
  out.aligned = (out.scale * (pred * out.rotation.transpose())).rowwise() +
                out.translation.transpose();
  return out;
}

}  // namespace camerapose
