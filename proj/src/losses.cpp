#include "camerapose/losses.hpp"

#include <set>

#include <nlohmann/json.hpp>

#include "camerapose/error.hpp"
#include "camerapose/geometry.hpp"

namespace camerapose::losses {

namespace {

void same_shape(const Var& a, const Var& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorCode::ShapeMismatch,
                std::string(what) + ": (" + std::to_string(a.rows()) + "x" +
                    std::to_string(a.cols()) + ") vs (" + std::to_string(b.rows()) + "x" +
                    std::to_string(b.cols()) + ")");
  }
}

std::vector<int> strided(int start, int stride, int count) {
  std::vector<int> idx(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) idx[static_cast<size_t>(i)] = start + i * stride;
  return idx;
}

}  // namespace

void LossWeights::validate() const {
  for (double w : {cam, pose2d_paired, pose2d_weak, pose3d, ref_paired, ref_weak}) {
    if (!(w >= 0.0)) throw Error(ErrorCode::ConfigError, "loss weights must be non-negative");
  }
}

nlohmann::json LossWeights::to_json() const {
  return {{"lambda_cam", cam},       {"lambda_2d_paired", pose2d_paired},
          {"lambda_2d_weak", pose2d_weak}, {"lambda_3d", pose3d},
          {"lambda_ref_paired", ref_paired}, {"lambda_ref_weak", ref_weak}};
}

LossWeights LossWeights::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {"lambda_cam",  "lambda_2d_paired",  "lambda_2d_weak",
                                              "lambda_3d",   "lambda_ref_paired", "lambda_ref_weak"};
  if (!j.is_object()) throw Error(ErrorCode::ConfigError, "loss weights must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw Error(ErrorCode::ConfigError, "unknown loss weight '" + key + "'");
    if (!value.is_number()) throw Error(ErrorCode::ConfigError, key + " must be a number");
  }
  LossWeights w;
  w.cam = j.value("lambda_cam", w.cam);
  w.pose2d_paired = j.value("lambda_2d_paired", w.pose2d_paired);
  w.pose2d_weak = j.value("lambda_2d_weak", w.pose2d_weak);
  w.pose3d = j.value("lambda_3d", w.pose3d);
  w.ref_paired = j.value("lambda_ref_paired", w.ref_paired);
  w.ref_weak = j.value("lambda_ref_weak", w.ref_weak);
  w.validate();
  return w;
}

std::string_view to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::Paired: return "paired";
    case DatasetKind::Weak: return "weak";
    case DatasetKind::Augmented: return "augmented";
  }
  return "unknown";
}

NormalizedConfidence normalize_confidence(const Eigen::Ref<const Eigen::VectorXd>& conf) {
  NormalizedConfidence out;
  const double total = conf.sum();
  if (conf.size() == 0 || !(total > 0.0)) {
    out.weights = Eigen::VectorXd::Constant(conf.size(), 1.0 / static_cast<double>(conf.size()));
    out.fallback = true;
    return out;
  }
  out.weights = conf / total;
  return out;
}

ag::Matrix normalize_confidence_rows(const ag::Matrix& conf) {
  ag::Matrix out(conf.rows(), conf.cols());
  for (Eigen::Index i = 0; i < conf.rows(); ++i) {
    out.row(i) = normalize_confidence(conf.row(i).transpose()).weights.transpose();
  }
  return out;
}

Var refinement_loss(const Var& pred, const Var& gt, const ag::Matrix& conf_norm) {
  same_shape(pred, gt, "refinement_loss");
  const auto joints = pred.cols() / 2;
  if (pred.cols() % 2 != 0 || conf_norm.rows() != pred.rows() || conf_norm.cols() != joints) {
    throw Error(ErrorCode::ShapeMismatch, "refinement_loss confidence shape");
  }
  // Each joint weight covers both of its coordinates.
  ag::Matrix weights(pred.rows(), pred.cols());
  for (Eigen::Index j = 0; j < joints; ++j) {
    weights.col(2 * j) = conf_norm.col(j);
    weights.col(2 * j + 1) = conf_norm.col(j);
  }
  const double n = static_cast<double>(pred.rows() * joints);
  return scale(sum(square(pred - gt) * Var::constant(weights)), 1.0 / n);
}

Var reproject(const Var& poses3d, const Var& camera, DepthPolicy policy) {
  if (poses3d.cols() % 3 != 0 || camera.cols() != nets::kCameraColumns ||
      camera.rows() != poses3d.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "reproject expects B x 3J poses and B x 7 cameras");
  }
  const int joints = static_cast<int>(poses3d.cols() / 3);
  const Var x = gather_cols(poses3d, strided(0, 3, joints));
  const Var y = gather_cols(poses3d, strided(1, 3, joints));
  const Var z = gather_cols(poses3d, strided(2, 3, joints));
  auto broadcast = [&](int column) {
    return gather_cols(camera, std::vector<int>(static_cast<size_t>(joints), column));
  };
  const Var depth = z + broadcast(nets::kTz);
  if (policy == DepthPolicy::Throw) {
    const auto& d = depth.value();
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
      for (Eigen::Index j = 0; j < d.cols(); ++j) {
        if (!(d(i, j) > kMinDepthMm)) {
          throw Error(ErrorCode::BehindCamera, "sample " + std::to_string(i) + " joint " +
                                                   std::to_string(j) + " at depth " +
                                                   std::to_string(d(i, j)) + " mm");
        }
      }
    }
  }
  const Var inv_depth = reciprocal(depth, kMinDepthMm);
  const Var u = broadcast(nets::kFx) * (x + broadcast(nets::kTx)) * inv_depth + broadcast(nets::kCx);
  const Var v = broadcast(nets::kFy) * (y + broadcast(nets::kTy)) * inv_depth + broadcast(nets::kCy);
  std::vector<int> interleave;
  for (int j = 0; j < joints; ++j) {
    interleave.push_back(j);
    interleave.push_back(joints + j);
  }
  return ag::gather_cols(ag::concat({u, v}, 1), interleave);
}

Var reprojection_loss(const Var& poses3d, const Var& camera, const Var& gt2d, DepthPolicy policy) {
  const Var projected = reproject(poses3d, camera, policy);
  same_shape(projected, gt2d, "reprojection_loss");
  const double n = static_cast<double>(gt2d.rows() * (gt2d.cols() / 2));
  return scale(sum(square(projected - gt2d)), 1.0 / n);
}

Var camera_loss(const Var& pred, const std::optional<Var>& gt) {
  if (!gt) throw Error(ErrorCode::MissingCameraGroundTruth, "camera loss needs calibration");
  same_shape(pred, *gt, "camera_loss");
  if (pred.cols() != nets::kCameraColumns) {
    throw Error(ErrorCode::ShapeMismatch, "camera_loss expects 7 columns");
  }
  return scale(sum(square(pred - *gt)), 1.0 / static_cast<double>(pred.rows()));
}

Var pose3d_loss(const Var& pred, const Var& gt) {
  same_shape(pred, gt, "pose3d_loss");
  if (pred.cols() % 3 != 0) throw Error(ErrorCode::ShapeMismatch, "pose3d_loss expects B x 3J");
  const double n = static_cast<double>(pred.rows() * (pred.cols() / 3));
  return scale(sum(square(pred - gt)), 1.0 / n);
}

namespace {
Var weighted(const std::optional<Var>& term, double w, Var acc) {
  if (!term) return acc;
  return acc + scale(*term, w);
}
}  // namespace

Var paired_total(const LossComponents& c, const LossWeights& w) {
  if (!c.pose3d) {
    throw Error(ErrorCode::ComponentKindMismatch, "paired batch without a 3D term");
  }
  Var total = Var::scalar(0.0);
  total = weighted(c.refine, w.ref_paired, total);
  total = weighted(c.camera, w.cam, total);
  total = weighted(c.reprojection, w.pose2d_paired, total);
  total = weighted(c.pose3d, w.pose3d, total);
  return total;
}

Var weak_total(const LossComponents& c, const LossWeights& w) {
  if (c.pose3d || c.camera) {
    throw Error(ErrorCode::ComponentKindMismatch, "weak batches carry no 3D or camera terms");
  }
  Var total = Var::scalar(0.0);
  total = weighted(c.refine, w.ref_weak, total);
  total = weighted(c.reprojection, w.pose2d_weak, total);
  return total;
}

nlohmann::json BatchLossReport::to_json() const {
  auto opt = [](const std::optional<double>& v) -> nlohmann::json {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  return {{"kind", std::string(losses::to_string(kind))},
          {"batch_size", batch_size},
          {"loss_ref", opt(refine)},
          {"loss_cam", opt(camera)},
          {"loss_2d", opt(reprojection)},
          {"loss_3d", opt(pose3d)},
          {"total", total}};
}

BatchLossReport make_report(DatasetKind kind, Eigen::Index batch_size, const LossComponents& c,
                            const Var& total) {
  auto val = [](const std::optional<Var>& v) -> std::optional<double> {
    if (!v) return std::nullopt;
    return v->item();
  };
  BatchLossReport r;
  r.kind = kind;
  r.batch_size = batch_size;
  r.refine = val(c.refine);
  r.camera = val(c.camera);
  r.reprojection = val(c.reprojection);
  r.pose3d = val(c.pose3d);
  r.total = total.item();
  return r;
}

Var lsgan_discriminator_loss(const Var& real_scores, const Var& fake_scores) {
  if (real_scores.rows() == 0 || fake_scores.rows() == 0) {
    throw Error(ErrorCode::EmptyPool, "discriminator loss needs real and fake scores");
  }
  return scale(mean(square(real_scores - 1.0)), 0.5) + scale(mean(square(fake_scores)), 0.5);
}

Var lsgan_generator_loss(const Var& fake_scores) {
  if (fake_scores.rows() == 0) throw Error(ErrorCode::EmptyPool, "generator loss needs fakes");
  return scale(mean(square(fake_scores - 1.0)), 0.5);
}

LsganLosses lsgan_losses(const nets::KcsDiscriminator& d2d, const nets::KcsDiscriminator& d3d,
                         const Var& real2d, const Var& real3d, const std::vector<Var>& fake2d_pool,
                         const Var& fake3d) {
  std::vector<Var> pool;
  for (const auto& v : fake2d_pool) {
    if (v.defined() && v.rows() > 0) pool.push_back(v);
  }
  if (pool.empty()) throw Error(ErrorCode::EmptyPool, "fake 2D pool is empty");
  if (!real2d.defined() || real2d.rows() == 0) throw Error(ErrorCode::EmptyPool, "real 2D pool");
  if (!real3d.defined() || real3d.rows() == 0) throw Error(ErrorCode::EmptyPool, "real 3D pool");
  if (!fake3d.defined() || fake3d.rows() == 0) throw Error(ErrorCode::EmptyPool, "fake 3D pool");

  const Var fake2d = pool.size() == 1 ? pool.front() : concat(pool, 0);
  const Var fake2d_scores = d2d.forward(fake2d);
  const Var fake3d_scores = d3d.forward(fake3d);
  LsganLosses out;
  out.dis_2d = lsgan_discriminator_loss(d2d.forward(real2d), fake2d_scores);
  out.dis_3d = lsgan_discriminator_loss(d3d.forward(real3d), fake3d_scores);
  out.gen = lsgan_generator_loss(fake2d_scores) + lsgan_generator_loss(fake3d_scores);
  return out;
}

}  // namespace camerapose::losses
