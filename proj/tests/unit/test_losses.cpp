#include <doctest.h>

#include <random>

#include <nlohmann/json.hpp>

#include "camerapose/error.hpp"
#include "camerapose/losses.hpp"
#include "support/fixtures.hpp"
#include "support/gradient_suites.hpp"

using namespace camerapose;
using ag::Matrix;
using ag::Var;

namespace {

Matrix row(std::initializer_list<double> v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

struct PairedBatch {
  Matrix x2, x3, camera;
};

PairedBatch paired_batch(int n, std::uint64_t seed) {
  const auto s = testing::paired_samples(n, seed);
  PairedBatch b{Matrix(n, 32), Matrix(n, 48), Matrix(n, 7)};
  for (int i = 0; i < n; ++i) {
    const auto& v = s[static_cast<size_t>(i)];
    b.x2.row(i) = flatten_pose(v.x);
    b.x3.row(i) = flatten_pose(*v.X);
    b.camera.row(i) << v.K->fx, v.K->fy, v.K->cx, v.K->cy, v.t->tx, v.t->ty, v.t->tz;
  }
  return b;
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("confidence normalization") {
  const auto a = losses::normalize_confidence(Eigen::Vector2d(0.5, 0.5));
  CHECK(a.weights(0) == doctest::Approx(0.5));
  CHECK_FALSE(a.fallback);
  const auto b = losses::normalize_confidence(Eigen::Vector3d(1, 0, 1));
  CHECK(b.weights(0) == doctest::Approx(0.5));
  CHECK(b.weights(1) == 0.0);
  for (double k : {0.01, 1.0, 250.0}) {
    const auto c = losses::normalize_confidence(Eigen::VectorXd::Constant(16, k));
    CHECK((c.weights.array() - 1.0 / 16).abs().maxCoeff() < 1e-15);
  }
  const auto z = losses::normalize_confidence(Eigen::VectorXd::Zero(4));
  CHECK(z.fallback);
  CHECK(z.weights(2) == doctest::Approx(0.25));
}

TEST_CASE("refinement loss hand cases") {
  const Var gt = Var::constant(row({0.1, 0.2}));
  const Matrix conf = Matrix::Ones(1, 1);
  CHECK(losses::refinement_loss(gt, gt, conf).item() == 0.0);
  const Var pred = Var::constant(row({0.4, 0.6}));
  CHECK(losses::refinement_loss(pred, gt, conf).item() == doctest::Approx(0.25));
  CHECK_THROWS_AS(losses::refinement_loss(pred, gt, Matrix::Ones(1, 2)), Error);
}

TEST_CASE("reprojection loss") {
  const auto b = paired_batch(6, 3);
  const Var X = Var::constant(b.x3);
  const Var cam = Var::constant(b.camera);
  CHECK(losses::reprojection_loss(X, cam, Var::constant(b.x2)).item() < 1e-24);

  SUBCASE("projective ambiguity: depth scale with focal compensation") {
    const Var noisy = Var::constant(b.x2.array() + 0.01);
    for (double s : {0.5, 1.7, 3.0}) {
      Matrix X2 = b.x3, cam2 = b.camera;
      for (int j = 0; j < kNumJoints; ++j) X2.col(3 * j + 2) *= s;
      cam2.col(nets::kTz) *= s;
      cam2.col(nets::kFx) *= s;
      cam2.col(nets::kFy) *= s;
      const double base = losses::reprojection_loss(X, cam, noisy).item();
      const double moved = losses::reprojection_loss(Var::constant(X2), Var::constant(cam2), noisy).item();
      CHECK(moved == doctest::Approx(base).epsilon(1e-10));
    }
  }
  SUBCASE("focal-length perturbation follows the analytic gradient") {
    Var c = Var::param(b.camera);
    const Var target = Var::constant(b.x2.array() + 0.02);
    ag::backward(losses::reprojection_loss(X, c, target));
    const double analytic = c.grad().col(nets::kFx).sum();
    const double h = 1e-6;
    Matrix up = b.camera, down = b.camera;
    up.col(nets::kFx).array() += h;
    down.col(nets::kFx).array() -= h;
    const double numeric = (losses::reprojection_loss(X, Var::constant(up), target).item() -
                            losses::reprojection_loss(X, Var::constant(down), target).item()) /
                           (2 * h);
    CHECK(std::abs(analytic - numeric) / std::abs(numeric) < 1e-4);
  }
  SUBCASE("behind-camera joints") {
    Matrix cam2 = b.camera;
    cam2(2, nets::kTz) = -100;
    try {
      losses::reproject(X, Var::constant(cam2), losses::DepthPolicy::Throw);
      FAIL("expected BehindCamera");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::BehindCamera);
      CHECK(std::string(e.what()).find("sample 2") != std::string::npos);
    }
    const Var clamped = losses::reproject(X, Var::constant(cam2), losses::DepthPolicy::Clamp);
    CHECK(clamped.value().allFinite());
  }
}

TEST_CASE("camera loss") {
  const Var gt = Var::constant(row({1.1, 1.2, 0.0, 0.1, 0.05, -0.1, 5.0}));
  CHECK(losses::camera_loss(gt, gt).item() == 0.0);
  const Var off = Var::constant(row({1.2, 1.2, 0.0, 0.1, 0.05, -0.1, 5.0}));
  CHECK(losses::camera_loss(off, gt).item() == doctest::Approx(0.01));
  CHECK_THROWS_AS(losses::camera_loss(off, std::nullopt), Error);
}

TEST_CASE("3D loss") {
  const auto b = paired_batch(4, 5);
  const Var gt = Var::constant(b.x3);
  CHECK(losses::pose3d_loss(gt, gt).item() == 0.0);
  Matrix shifted = b.x3;
  for (int j = 0; j < kNumJoints; ++j) {
    shifted.col(3 * j) .array() += 3;
    shifted.col(3 * j + 2).array() += 4;
  }
  CHECK(losses::pose3d_loss(Var::constant(shifted), gt).item() == doctest::Approx(25.0));
  Matrix dup_pred(8, 48), dup_gt(8, 48);
  dup_pred << shifted, shifted;
  dup_gt << b.x3, b.x3;
  CHECK(losses::pose3d_loss(Var::constant(dup_pred), Var::constant(dup_gt)).item() == doctest::Approx(25.0));
}

TEST_CASE("weighted totals") {
  const losses::LossWeights w;
  CHECK(w.cam == 0.01);
  CHECK(w.pose2d_paired == 0.5);
  CHECK(w.pose2d_weak == 0.2);
  CHECK(w.pose3d == 1.0);

  losses::LossComponents zero;
  zero.refine = zero.camera = zero.reprojection = zero.pose3d = Var::scalar(0.0);
  CHECK(losses::paired_total(zero, w).item() == 0.0);

  losses::LossComponents c;
  c.refine = Var::scalar(0.0);
  c.camera = Var::scalar(1.0);
  c.reprojection = Var::scalar(1.0);
  c.pose3d = Var::scalar(1.0);
  CHECK(losses::paired_total(c, w).item() == doctest::Approx(1.51));

  CHECK_THROWS_AS(losses::weak_total(c, w), Error);
  losses::LossComponents weak;
  weak.refine = Var::scalar(2.0);
  weak.reprojection = Var::scalar(1.0);
  CHECK(losses::weak_total(weak, w).item() == doctest::Approx(2.2));
  CHECK_THROWS_AS(losses::paired_total(weak, w), Error);

  const auto report = losses::make_report(losses::DatasetKind::Weak, 4, weak, losses::weak_total(weak, w));
  const auto j = report.to_json();
  CHECK(j["loss_cam"].is_null());
  CHECK(j["loss_3d"].is_null());
}

TEST_CASE("loss weights validate and round-trip") {
  losses::LossWeights w;
  w.cam = 0.3;
  CHECK(losses::LossWeights::from_json(w.to_json()).cam == 0.3);
  w.pose3d = -1;
  CHECK_THROWS_AS(w.validate(), Error);
  CHECK_THROWS_AS(losses::LossWeights::from_json(nlohmann::json{{"bogus", 1}}), Error);
}

TEST_CASE("least-squares GAN hand cases") {
  const Var ones = Var::constant(Matrix::Ones(4, 1));
  const Var zeros = Var::constant(Matrix::Zero(4, 1));
  const Var half = Var::constant(Matrix::Constant(4, 1, 0.5));
  CHECK(losses::lsgan_discriminator_loss(ones, zeros).item() == 0.0);
  CHECK(losses::lsgan_discriminator_loss(half, half).item() == doctest::Approx(0.25));
  CHECK(losses::lsgan_generator_loss(ones).item() == 0.0);
  CHECK(losses::lsgan_generator_loss(half).item() == doctest::Approx(0.125));
  CHECK_THROWS_AS(losses::lsgan_discriminator_loss(ones, Var::constant(Matrix(0, 1))), Error);
}

TEST_CASE("losses are invariant to batch order") {
  const auto b = paired_batch(5, 9);
  std::mt19937_64 rng(2);
  const Matrix noisy3 = b.x3 + testing::uniform_matrix(5, 48, -10, 10, rng);
  const Matrix noisy2 = b.x2 + testing::uniform_matrix(5, 32, -0.01, 0.01, rng);
  const Matrix conf = losses::normalize_confidence_rows(testing::uniform_matrix(5, 16, 0.1, 1, rng));
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(5);
  perm.indices() << 3, 0, 4, 1, 2;
  auto p = [&](const Matrix& m) { return Var::constant(perm * m); };
  auto v = [](const Matrix& m) { return Var::constant(m); };
  CHECK(losses::pose3d_loss(v(noisy3), v(b.x3)).item() ==
        doctest::Approx(losses::pose3d_loss(p(noisy3), p(b.x3)).item()));
  CHECK(losses::reprojection_loss(v(noisy3), v(b.camera), v(b.x2)).item() ==
        doctest::Approx(losses::reprojection_loss(p(noisy3), p(b.camera), p(b.x2)).item()));
  CHECK(losses::refinement_loss(v(noisy2), v(b.x2), conf).item() ==
        doctest::Approx(losses::refinement_loss(p(noisy2), p(b.x2), perm * conf).item()));
  CHECK(losses::camera_loss(v(b.camera.array() + 0.1), v(b.camera)).item() ==
        doctest::Approx(losses::camera_loss(p(b.camera.array() + 0.1), p(b.camera)).item()));
}

TEST_CASE("every loss matches finite differences") {
  for (const auto& c : testing::loss_cases()) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const auto r = c.run(seed);
      INFO(c.name << " seed " << seed << " worst leaf " << r.worst);
      CHECK(r.max_rel < 1e-4);
    }
  }
}

}
