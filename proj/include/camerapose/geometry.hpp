#pragma once

#include <Eigen/Core>

#include "camerapose/skeleton.hpp"

namespace camerapose {

// Joints closer than this to the image plane (camera-space depth, mm) are
// treated as behind the camera.
inline constexpr double kMinDepthMm = 1.0;

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  bool valid() const;
  Eigen::Vector4d as_vector() const { return {fx, fy, cx, cy}; }
};

struct Offset3D {
  double tx = 0.0;
  double ty = 0.0;
  double tz = 0.0;

  Eigen::Vector3d as_vector() const { return {tx, ty, tz}; }
  static Offset3D from_vector(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }
};

struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  bool valid(double tol = 1e-9) const;
};

Eigen::Matrix3d rotation_from_axis_angle(const Eigen::Vector3d& axis_angle);

// Pinhole projection with perspective division. Works for any joint count.
Eigen::MatrixX2d project(const Eigen::Ref<const Eigen::MatrixX3d>& pose,
                         const CameraIntrinsics& K, const Offset3D& t);

Eigen::MatrixX3d apply_rigid(const Eigen::Ref<const Eigen::MatrixX3d>& pose,
                             const RigidTransform& T);

struct ProcrustesResult {
  Eigen::MatrixX3d aligned;
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
};

// Least-squares similarity alignment of pred onto gt (Umeyama). Reflections
// are excluded by flipping the weakest singular direction.
ProcrustesResult procrustes_align(const Eigen::Ref<const Eigen::MatrixX3d>& pred,
                                  const Eigen::Ref<const Eigen::MatrixX3d>& gt);

}  // namespace camerapose
