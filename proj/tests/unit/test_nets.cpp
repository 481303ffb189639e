#include <doctest.h>

#include <random>

#include <nlohmann/json.hpp>

#include "camerapose/error.hpp"
#include "camerapose/losses.hpp"
#include "camerapose/nets.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"
#include "support/gradient_suites.hpp"

using namespace camerapose;
using ag::Matrix;
using ag::Var;
using testing::uniform_matrix;

namespace {

// Rows of normalized 2D poses, rows of root-relative 3D poses (mm).
Matrix pose2d_rows(int n, std::uint64_t seed) {
  const auto s = testing::paired_samples(n, seed);
  Matrix m(n, kNumJoints * 2);
  for (int i = 0; i < n; ++i) m.row(i) = flatten_pose(s[static_cast<size_t>(i)].x);
  return m;
}

Matrix pose3d_rows(int n, std::uint64_t seed) {
  const auto s = testing::paired_samples(n, seed);
  Matrix m(n, kNumJoints * 3);
  for (int i = 0; i < n; ++i) m.row(i) = flatten_pose(*s[static_cast<size_t>(i)].X);
  return m;
}

}  // namespace

TEST_SUITE("nets") {

TEST_CASE("parameter counts match the documented layout") {
  CHECK(nets::RefineNet({16}, 1).params().num_scalars() == nets::RefineNet::expected_param_count(16));
  CHECK(nets::Lifter({16}, 1000, 1).params().num_scalars() == nets::Lifter::expected_param_count(16));
  CHECK(nets::CameraBranch({16}, 1).params().num_scalars() == nets::CameraBranch::expected_param_count(16));
  CHECK(nets::PoseGenerator(16, 1).params().num_scalars() == nets::PoseGenerator::expected_param_count(16));
  CHECK(nets::KcsDiscriminator(3, {16}, 1).params().num_scalars() ==
        nets::KcsDiscriminator::expected_param_count(16));
}

TEST_CASE("fresh RefineNet is the identity") {
  const nets::RefineNet r({32}, 7);
  const Matrix x = pose2d_rows(8, 3);
  const Matrix conf = Matrix::Constant(8, kNumJoints, 1.0 / kNumJoints);
  CHECK(r.forward(Var::constant(x), Var::constant(conf)).value() == x);
}

TEST_CASE("RefineNet commutes with translation and scale") {
  nets::RefineNet r({32}, 8);
  std::mt19937_64 rng(8);
  // A trained exit layer; the fresh one is zero.
  r.params().get("exit.W").mutable_value() = testing::uniform_matrix(32, kNumJoints * 2, -0.1, 0.1, rng);
  const Matrix x = pose2d_rows(4, 5);
  const Matrix conf = losses::normalize_confidence_rows(testing::uniform_matrix(4, kNumJoints, 0.1, 1, rng));
  const Matrix y = r.forward(Var::constant(x), Var::constant(conf)).value();
  Matrix shift(1, kNumJoints * 2);
  for (int j = 0; j < kNumJoints; ++j) shift.block(0, 2 * j, 1, 2) << 0.3, -0.2;
  const Matrix moved = (2.5 * x).rowwise() + shift.row(0);
  const Matrix y_moved = r.forward(Var::constant(moved), Var::constant(conf)).value();
  CHECK((y_moved - ((2.5 * y).rowwise() + shift.row(0))).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((y - x).cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("networks are pure functions of parameters and input") {
  const nets::Lifter a({32}, 1000, 5);
  const nets::Lifter b({32}, 1000, 5);
  const Matrix x = pose2d_rows(4, 1);
  CHECK(a.forward(Var::constant(x)).value() == b.forward(Var::constant(x)).value());
  CHECK(a.forward(Var::constant(x)).value() == a.forward(Var::constant(x)).value());
  const nets::Lifter c({32}, 1000, 6);
  CHECK(a.forward(Var::constant(x)).value() != c.forward(Var::constant(x)).value());
}

TEST_CASE("lifter keeps the pelvis at the origin") {
  const nets::Lifter l({16}, 1000, 2);
  const Matrix out = l.forward(Var::constant(pose2d_rows(5, 2))).value();
  CHECK(out.leftCols(3).isZero(0.0));
  CHECK_THROWS_AS(l.forward(Var::constant(Matrix::Zero(2, 30))), Error);
}

TEST_CASE("camera branch outputs always satisfy the intrinsics invariants") {
  const nets::CameraBranch cam({32}, 3);
  std::mt19937_64 rng(11);
  const Matrix x = uniform_matrix(1000, kNumJoints * 2, -50, 50, rng);
  const Matrix out = cam.forward(Var::constant(x)).value();
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const CameraIntrinsics K{out(i, nets::kFx), out(i, nets::kFy), out(i, nets::kCx), out(i, nets::kCy)};
    CHECK(K.valid());
    CHECK(out(i, nets::kTz) >= nets::kMinDepthOffsetMm);
    CHECK(out(i, nets::kTz) <= nets::kMaxDepthOffsetMm);
  }
}

TEST_CASE("zeroed generator emits identity augmentation parameters") {
  nets::PoseGenerator g(32, 4);
  g.zero_output_layers();
  const Matrix poses = pose3d_rows(3, 5);
  std::mt19937_64 rng(1);
  const auto out = g.forward(Var::constant(poses), Var::constant(uniform_matrix(3, nets::kNoiseDim, -1, 1, rng)));
  for (Eigen::Index i = 0; i < 3; ++i) {
    const auto p = out.row(i);
    CHECK(p.bone_angle.isZero(0.0));
    CHECK(p.bone_log_scale.isZero(0.0));
    CHECK(p.rigid().rotation.isIdentity(0.0));
    CHECK(p.rigid_translation.z() == doctest::Approx(0.5 * (nets::kMinRigidDepthMm + nets::kMaxRigidDepthMm)));
    CHECK(p.within_bounds());
  }
}

TEST_CASE("generator outputs stay within bounds and respond to noise") {
  const nets::PoseGenerator g(32, 9);
  const Matrix poses = pose3d_rows(50, 6);
  std::mt19937_64 rng(2);
  const Matrix n1 = uniform_matrix(50, nets::kNoiseDim, -3, 3, rng);
  const Matrix n2 = uniform_matrix(50, nets::kNoiseDim, -3, 3, rng);
  const auto a = g.forward(Var::constant(poses), Var::constant(n1));
  const auto b = g.forward(Var::constant(poses), Var::constant(n2));
  for (Eigen::Index i = 0; i < 50; ++i) {
    CHECK(a.row(i).within_bounds());
    CHECK((a.row(i).bone_angle - b.row(i).bone_angle).norm() > 0.0);
  }
}

TEST_CASE("3D discriminator score is invariant under global rotation") {
  const nets::KcsDiscriminator d(3, {32}, 8);
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const Pose3D p = testing::random_pose(rng);
    const Pose3D q = p * testing::random_rotation(rng).transpose();
    CHECK(d(p) == doctest::Approx(d(q)).epsilon(1e-9));
  }
}

TEST_CASE("kcs features agree with the skeleton Gram blocks") {
  std::mt19937_64 rng(3);
  const Pose3D p = testing::random_pose(rng);
  const auto feats = nets::kcs_features(Var::constant(flatten_pose(p)), 3);
  const KcsMatrix k = kcs(p);
  for (int part = 0; part < kNumParts; ++part) {
    const auto& block = k.parts[static_cast<size_t>(part)];
    const auto& f = feats[static_cast<size_t>(part)].value();
    CHECK(f.cols() == nets::kcs_feature_width(static_cast<BodyPart>(part)));
    double sum_block = 0;
    for (Eigen::Index a = 0; a < block.rows(); ++a) {
      for (Eigen::Index b = a; b < block.cols(); ++b) sum_block += block(a, b);
    }
    // 3D features are in square metres.
    CHECK(f.sum() == doctest::Approx(sum_block * 1e-6).epsilon(1e-9));
  }
}

TEST_CASE("every head matches finite differences") {
  for (const auto& c : testing::head_cases()) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const auto r = c.run(seed);
      INFO(c.name << " seed " << seed << " worst leaf " << r.worst);
      CHECK(r.max_rel < 1e-4);
    }
  }
}

TEST_CASE("model serialization round-trips") {
  nets::NetConfig cfg;
  cfg.refine_width = cfg.lifter_width = cfg.camera_width = cfg.generator_width = cfg.discriminator_width = 8;
  const nets::Model m(cfg, 42);
  const nets::Model back = nets::Model::from_json(m.to_json());
  CHECK(back.to_json() == m.to_json());
  testing::TempDir dir("nets");
  nets::save_model(m, dir.file("model.json"));
  const nets::Model loaded = nets::load_model(dir.file("model.json"));
  CHECK(loaded.to_json() == m.to_json());
  CHECK(loaded.all_finite());
  CHECK_THROWS_AS(nets::load_model(dir.file("missing.json")), Error);

  nets::Model copy = m;
  copy.lifter.params().get("exit.b").mutable_value()(0, 0) += 1.0;
  CHECK(copy.to_json() != m.to_json());
  copy.assign(m);
  CHECK(copy.to_json() == m.to_json());
}

}
