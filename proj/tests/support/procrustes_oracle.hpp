#pragma once

// Brute-force similarity alignment used as an independent oracle for
// procrustes_align. Rotation (ZYX Euler) and scale are searched on nested
// grids; for a fixed (s, R) the best translation is the centroid difference.

#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace camerapose::testing {

struct GridAlignment {
  double rms = std::numeric_limits<double>::infinity();
  double yaw = 0, pitch = 0, roll = 0, scale = 1;
  double final_angle_step = 0;  // radians
  double final_scale_step = 0;
};

inline double rms_residual(const Eigen::MatrixX3d& pred, const Eigen::MatrixX3d& gt, double s,
                           const Eigen::Matrix3d& R) {
  const Eigen::RowVector3d mp = pred.colwise().mean();
  const Eigen::RowVector3d mg = gt.colwise().mean();
  const Eigen::MatrixX3d moved = (s * (pred.rowwise() - mp) * R.transpose()).rowwise() + mg;
  return std::sqrt((moved - gt).rowwise().squaredNorm().mean());
}

inline Eigen::Matrix3d euler_zyx(double yaw, double pitch, double roll) {
  return (Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()) *
          Eigen::AngleAxisd(pitch, Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(roll, Eigen::Vector3d::UnitX()))
      .toRotationMatrix();
}

inline GridAlignment grid_align(const Eigen::MatrixX3d& pred, const Eigen::MatrixX3d& gt) {
  constexpr double pi = std::numbers::pi;
  GridAlignment best;
  auto search = [&](double y0, double y1, double p0, double p1, double r0, double r1, double a_step,
                    double s0, double s1, double s_step) {
    GridAlignment b = best;
    for (double y = y0; y <= y1 + 1e-12; y += a_step) {
      for (double p = p0; p <= p1 + 1e-12; p += a_step) {
        for (double r = r0; r <= r1 + 1e-12; r += a_step) {
          const Eigen::Matrix3d R = euler_zyx(y, p, r);
          for (double s = s0; s <= s1 + 1e-12; s += s_step) {
            const double e = rms_residual(pred, gt, s, R);
            if (e < b.rms) b = {e, y, p, r, s, a_step, s_step};
          }
        }
      }
    }
    best = b;
  };
  double a_step = 6.0 * pi / 180.0;
  double s_step = 0.05;
  search(-pi, pi, -pi / 2, pi / 2, -pi, pi, a_step, 0.25, 4.0, s_step);
  for (int level = 0; level < 4; ++level) {
    const double a = 2 * a_step, s = 2 * s_step;
    a_step /= 8.0;
    s_step /= 8.0;
    search(best.yaw - a, best.yaw + a, best.pitch - a, best.pitch + a, best.roll - a, best.roll + a, a_step,
           best.scale - s, best.scale + s, s_step);
  }
  return best;
}

}  // namespace camerapose::testing
