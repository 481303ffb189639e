#include <doctest.h>

#include <numbers>
#include <random>

#include "camerapose/data.hpp"
#include "camerapose/error.hpp"
#include "camerapose/geometry.hpp"
#include "support/fixtures.hpp"
#include "support/procrustes_oracle.hpp"

using namespace camerapose;

TEST_SUITE("geometry") {

TEST_CASE("pinhole projection hand cases") {
  Eigen::MatrixX3d X(1, 3);
  X << 0, 0, 1000;
  const auto a = project(X, {1, 1, 0, 0}, {});
  CHECK(a.norm() == doctest::Approx(0.0));

  X << 100, 0, 1000;
  const auto b = project(X, {1000, 1000, 10, 20}, {});
  CHECK(b(0, 0) == doctest::Approx(110));
  CHECK(b(0, 1) == doctest::Approx(20));
}

TEST_CASE("projection is invariant to uniform scaling of camera-space points") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> s(0.2, 5.0);
  for (int trial = 0; trial < 50; ++trial) {
    const Pose3D X = testing::random_pose(rng);
    const CameraIntrinsics K{1100, 1150, 500, 480};
    const Offset3D t{40, -70, 5000};
    const double k = s(rng);
    const Pose3D Xs = k * X;
    const Offset3D ts{k * t.tx, k * t.ty, k * t.tz};
    CHECK((project(X, K, t) - project(Xs, K, ts)).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("noiseless synthetic records reproject exactly") {
  const auto r = testing::synth(200, 0, 77);
  for (const auto& rec : r.paired) {
    const auto x = project(*rec.joints3d_mm, rec.camera->intrinsics(), rec.camera->offset());
    CHECK((x - rec.joints2d_px).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("rigid transforms") {
  Pose3D X = Pose3D::Zero();
  X.row(1) << 1, 0, 0;
  CHECK(apply_rigid(X, {}) == X);
  const RigidTransform T{rotation_from_axis_angle({0, 0, std::numbers::pi / 2}), {0, 0, 0}};
  const auto Y = apply_rigid(X, T);
  CHECK((Y.row(1) - Eigen::RowVector3d(0, 1, 0)).norm() < 1e-12);
  CHECK(T.valid());
  RigidTransform bad;
  bad.rotation(0, 0) = 2;
  CHECK_FALSE(bad.valid());
  CHECK(rotation_from_axis_angle(Eigen::Vector3d::Zero()).isIdentity(0.0));
}

TEST_CASE("intrinsics validity") {
  CHECK(CameraIntrinsics{1000, 1000, 500, 500}.valid());
  CHECK_FALSE(CameraIntrinsics{0, 1000, 500, 500}.valid());
  CHECK_FALSE(CameraIntrinsics{1000, -1, 500, 500}.valid());
}

TEST_CASE("procrustes identity and similarity recovery") {
  std::mt19937_64 rng(8);
  const Pose3D gt = testing::random_pose(rng);
  const auto same = procrustes_align(gt, gt);
  CHECK((same.aligned - gt).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(same.scale == doctest::Approx(1.0));
  CHECK(same.rotation.isIdentity(1e-9));
  CHECK(same.translation.norm() < 1e-9);

  for (int trial = 0; trial < 50; ++trial) {
    const Pose3D g = testing::random_pose(rng);
    const Eigen::Matrix3d R0 = testing::random_rotation(rng);
    Pose3D pred = 2.0 * g * R0.transpose();
    pred.rowwise() += Eigen::RowVector3d(300, -20, 4000);
    const auto r = procrustes_align(pred, g);
    CHECK((r.aligned - g).rowwise().norm().maxCoeff() < 1e-6);
    CHECK(r.scale == doctest::Approx(0.5));
  }
}

TEST_CASE("procrustes never returns a reflection") {
  std::mt19937_64 rng(12);
  const Pose3D g = testing::random_pose(rng);
  Pose3D mirrored = g;
  mirrored.col(0) *= -1.0;
  const auto r = procrustes_align(mirrored, g);
  CHECK(r.rotation.determinant() == doctest::Approx(1.0));
}

TEST_CASE("procrustes residual matches a brute-force grid oracle") {
  Eigen::MatrixX3d gt(4, 3);
  gt << 0, 0, 0, 120, 10, -5, -30, 200, 40, 15, -60, 150;
  const Eigen::Matrix3d R0 = testing::euler_zyx(0.7, -0.4, 2.1);
  Eigen::MatrixX3d pred = (1.3 * gt * R0.transpose()).rowwise() + Eigen::RowVector3d(50, -80, 20);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> noise(0.0, 6.0);
  for (Eigen::Index i = 0; i < pred.size(); ++i) pred.data()[i] += noise(rng);

  const auto closed = procrustes_align(pred, gt);
  const double closed_rms = std::sqrt((closed.aligned - gt).rowwise().squaredNorm().mean());
  const auto grid = testing::grid_align(pred, gt);
  // First-order bound on how far the finest grid can sit from the optimum.
  const double extent = (pred.rowwise() - pred.colwise().mean()).rowwise().norm().maxCoeff();
  const double resolution = grid.scale * extent * 1.5 * grid.final_angle_step + extent * grid.final_scale_step;
  MESSAGE("closed-form rms " << closed_rms << " mm, grid rms " << grid.rms << " mm, resolution " << resolution);
  CHECK(closed_rms <= grid.rms + 1e-9);
  CHECK(grid.rms - closed_rms <= resolution);
}

}
