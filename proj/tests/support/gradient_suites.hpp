#pragma once

// Randomized finite-difference checks for every loss and every network head.
// Each case builds a fresh random instance from its seed.

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "camerapose/augment.hpp"
#include "camerapose/losses.hpp"
#include "camerapose/nets.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

namespace camerapose::testing {

struct GradCase {
  std::string name;
  std::function<GradCheckResult(std::uint64_t seed)> run;
};

namespace detail {

inline constexpr int kBatch = 3;
inline constexpr int kWidth = 6;

struct Batch {
  ag::Matrix x2;      // normalized 2D rows
  ag::Matrix x3;      // root-relative mm rows
  ag::Matrix camera;  // ground-truth camera rows, normalized intrinsics
};

inline Batch batch(std::uint64_t seed) {
  const auto s = paired_samples(kBatch, seed);
  Batch b{ag::Matrix(kBatch, 32), ag::Matrix(kBatch, 48), ag::Matrix(kBatch, 7)};
  for (int i = 0; i < kBatch; ++i) {
    const auto& v = s[static_cast<size_t>(i)];
    b.x2.row(i) = flatten_pose(v.x);
    b.x3.row(i) = flatten_pose(*v.X);
    b.camera.row(i) << v.K->fx, v.K->fy, v.K->cx, v.K->cy, v.t->tx, v.t->ty, v.t->tz;
  }
  return b;
}

inline ag::Var probe(const ag::Var& out, const ag::Matrix& w) {
  return ag::sum(out * ag::Var::constant(w));
}

inline ag::Matrix jitter(const ag::Matrix& m, double amount, std::mt19937_64& rng) {
  return m + uniform_matrix(m.rows(), m.cols(), -amount, amount, rng);
}

// Zero-initialized biases put dead units exactly on the ReLU kink, where a
// central difference cannot match the one-sided derivative.
inline void jitter_biases(ag::ParamSet& params, std::mt19937_64& rng) {
  for (auto& [name, v] : params) {
    if (name.size() >= 2 && name.compare(name.size() - 2, 2, ".b") == 0) {
      v.mutable_value() += uniform_matrix(v.rows(), v.cols(), -0.1, 0.1, rng);
    }
  }
}

inline std::vector<std::pair<std::string, ag::Var>> with(std::vector<std::pair<std::string, ag::Var>> a,
                                                         const std::vector<std::pair<std::string, ag::Var>>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace detail

inline std::vector<GradCase> loss_cases() {
  using ag::Var;
  using namespace detail;
  std::vector<GradCase> cases;

  cases.push_back({"refinement", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     const Batch b = batch(seed);
                     Var pred = Var::param(jitter(b.x2, 0.05, rng));
                     const auto conf = losses::normalize_confidence_rows(uniform_matrix(kBatch, 16, 0.05, 1, rng));
                     return grad_check({{"pred", pred}}, [&] {
                       return losses::refinement_loss(pred, Var::constant(b.x2), conf);
                     });
                   }});
  cases.push_back({"reprojection", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     const Batch b = batch(seed);
                     Var X = Var::param(jitter(b.x3, 30, rng));
                     Var cam = Var::param(b.camera + uniform_matrix(kBatch, 7, -0.05, 0.05, rng));
                     return grad_check({{"poses3d", X}, {"camera", cam}}, [&] {
                       return losses::reprojection_loss(X, cam, Var::constant(b.x2));
                     });
                   }});
  cases.push_back({"camera", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     const Batch b = batch(seed);
                     Var cam = Var::param(jitter(b.camera, 0.1, rng));
                     return grad_check({{"camera", cam}}, [&] {
                       return losses::camera_loss(cam, Var::constant(b.camera));
                     });
                   }});
  cases.push_back({"pose3d", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     const Batch b = batch(seed);
                     Var X = Var::param(jitter(b.x3, 20, rng));
                     return grad_check({{"poses3d", X}}, [&] {
                       return losses::pose3d_loss(ag::scale(X, 1e-3), Var::constant(b.x3 * 1e-3));
                     });
                   }});
  cases.push_back({"lsgan", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     const Batch b = batch(seed);
                     nets::KcsDiscriminator d2(2, {kWidth}, seed + 1);
                     nets::KcsDiscriminator d3(3, {kWidth}, seed + 2);
                     jitter_biases(d2.params(), rng);
                     jitter_biases(d3.params(), rng);
                     Var fake2 = Var::param(jitter(b.x2, 0.05, rng));
                     Var weak2 = Var::param(jitter(b.x2, 0.05, rng));
                     Var fake3 = Var::param(jitter(b.x3, 20, rng));
                     const Var real2 = Var::constant(b.x2);
                     const Var real3 = Var::constant(b.x3);
                     auto leaves = with(with(leaves_of(d2.params(), "d2."), leaves_of(d3.params(), "d3.")),
                                        {{"fake2d", fake2}, {"weak2d", weak2}, {"fake3d", fake3}});
                     return grad_check(leaves, [&] {
                       const auto l = losses::lsgan_losses(d2, d3, real2, real3, {fake2, weak2}, fake3);
                       return l.dis_2d + l.dis_3d + l.gen;
                     });
                   }});
  cases.push_back({"paired total", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     const Batch b = batch(seed);
                     Var refined = Var::param(jitter(b.x2, 0.03, rng));
                     Var X = Var::param(jitter(b.x3 * 1e-3, 0.02, rng));
                     Var cam = Var::param(b.camera + uniform_matrix(kBatch, 7, -0.05, 0.05, rng));
                     const auto conf = losses::normalize_confidence_rows(uniform_matrix(kBatch, 16, 0.05, 1, rng));
                     return grad_check({{"refined", refined}, {"poses3d", X}, {"camera", cam}}, [&] {
                       losses::LossComponents c;
                       c.refine = losses::refinement_loss(refined, Var::constant(b.x2), conf);
                       c.camera = losses::camera_loss(cam, Var::constant(b.camera));
                       c.reprojection = losses::reprojection_loss(ag::scale(X, 1e3), cam, Var::constant(b.x2));
                       c.pose3d = losses::pose3d_loss(X, Var::constant(b.x3 * 1e-3));
                       return losses::paired_total(c, {});
                     });
                   }});
  cases.push_back({"weak total", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     const Batch b = batch(seed);
                     Var refined = Var::param(jitter(b.x2, 0.03, rng));
                     Var X = Var::param(jitter(b.x3, 20, rng));
                     Var cam = Var::param(b.camera + uniform_matrix(kBatch, 7, -0.05, 0.05, rng));
                     const auto conf = losses::normalize_confidence_rows(uniform_matrix(kBatch, 16, 0.05, 1, rng));
                     return grad_check({{"refined", refined}, {"poses3d", X}, {"camera", cam}}, [&] {
                       losses::LossComponents c;
                       c.refine = losses::refinement_loss(refined, Var::constant(b.x2), conf);
                       c.reprojection = losses::reprojection_loss(X, cam, Var::constant(b.x2));
                       return losses::weak_total(c, {});
                     });
                   }});
  cases.push_back({"augmentation path", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     const Batch b = batch(seed);
                     nets::PoseGenerator gen(kWidth, seed + 3);
                     jitter_biases(gen.params(), rng);
                     const Var noise = Var::constant(uniform_matrix(kBatch, nets::kNoiseDim, -1, 1, rng));
                     const ag::Matrix w3 = uniform_matrix(kBatch, 48, -1e-3, 1e-3, rng);
                     const ag::Matrix w2 = uniform_matrix(kBatch, 32, -1, 1, rng);
                     return grad_check(leaves_of(gen.params()), [&] {
                       const auto a = augment::augment_batch(Var::constant(b.x3), gen.forward(Var::constant(b.x3), noise),
                                                             b.camera.leftCols(4));
                       return probe(a.poses3d, w3) + probe(a.poses2d, w2);
                     });
                   }});
  return cases;
}

inline std::vector<GradCase> head_cases() {
  using ag::Var;
  using namespace detail;
  std::vector<GradCase> cases;

  cases.push_back({"refine", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     const Batch b = batch(seed);
                     nets::RefineNet net({kWidth}, seed);
                     // The exit starts at zero; give it weight so every layer is exercised.
                     for (auto& [name, v] : net.params()) v.mutable_value() = uniform_matrix(v.rows(), v.cols(), -0.5, 0.5, rng);
                     Var x = Var::param(b.x2);
                     const auto conf = losses::normalize_confidence_rows(uniform_matrix(kBatch, 16, 0.05, 1, rng));
                     const ag::Matrix w = uniform_matrix(kBatch, 32, -1, 1, rng);
                     return grad_check(with(leaves_of(net.params()), {{"input", x}}),
                                       [&] { return probe(net.forward(x, Var::constant(conf)), w); });
                   }});
  cases.push_back({"lifter", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     const Batch b = batch(seed);
                     nets::Lifter net({kWidth}, 1000, seed);
                     jitter_biases(net.params(), rng);
                     Var x = Var::param(b.x2);
                     const ag::Matrix w = uniform_matrix(kBatch, 48, -1e-3, 1e-3, rng);
                     return grad_check(with(leaves_of(net.params()), {{"input", x}}),
                                       [&] { return probe(net.forward(x), w); });
                   }});
  cases.push_back({"camera", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     const Batch b = batch(seed);
                     nets::CameraBranch net({kWidth}, seed);
                     jitter_biases(net.params(), rng);
                     Var x = Var::param(b.x2);
                     ag::Matrix w = uniform_matrix(kBatch, 7, -1, 1, rng);
                     w.rightCols(3) *= 1e-3;
                     return grad_check(with(leaves_of(net.params()), {{"input", x}}),
                                       [&] { return probe(net.forward(x), w); });
                   }});
  cases.push_back({"generator", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     const Batch b = batch(seed);
                     nets::PoseGenerator net(kWidth, seed);
                     jitter_biases(net.params(), rng);
                     Var poses = Var::param(b.x3);
                     Var noise = Var::param(uniform_matrix(kBatch, nets::kNoiseDim, -1, 1, rng));
                     const ag::Matrix wa = uniform_matrix(kBatch, 45, -1, 1, rng);
                     const ag::Matrix wl = uniform_matrix(kBatch, 15, -1, 1, rng);
                     ag::Matrix wr = uniform_matrix(kBatch, 6, -1, 1, rng);
                     wr.rightCols(3) *= 1e-3;
                     return grad_check(with(leaves_of(net.params()), {{"poses", poses}, {"noise", noise}}), [&] {
                       const auto g = net.forward(poses, noise);
                       return probe(g.bone_angle, wa) + probe(g.bone_log_scale, wl) + probe(g.rigid, wr);
                     });
                   }});
  for (int dims : {2, 3}) {
    cases.push_back({"discriminator " + std::to_string(dims) + "d", [dims](std::uint64_t seed) {
                       std::mt19937_64 rng(seed);
                       const Batch b = batch(seed);
                       nets::KcsDiscriminator net(dims, {kWidth}, seed);
                       jitter_biases(net.params(), rng);
                       Var poses = Var::param(dims == 2 ? b.x2 : b.x3);
                       const ag::Matrix w = uniform_matrix(kBatch, 1, -1, 1, rng);
                       return grad_check(with(leaves_of(net.params()), {{"poses", poses}}),
                                         [&] { return probe(net.forward(poses), w); });
                     }});
  }
  return cases;
}

}  // namespace camerapose::testing
