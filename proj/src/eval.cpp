#include "camerapose/eval.hpp"

#include <algorithm>

#include <random>

#include <nlohmann/json.hpp>

#include "camerapose/error.hpp"
#include "camerapose/geometry.hpp"
#include "camerapose/losses.hpp"

namespace camerapose::eval {

namespace {

constexpr Eigen::Index kChunk = 256;

void same_shape(Eigen::Index pr, Eigen::Index pc, Eigen::Index gr, Eigen::Index gc) {
  if (pr != gr || pc != gc || pr < 2) {
    throw Error(ErrorCode::ShapeMismatch, "metric inputs must share a shape with at least 2 joints");
  }
}

}  // namespace

double mpjpe(const Eigen::Ref<const Eigen::MatrixX3d>& pred,
             const Eigen::Ref<const Eigen::MatrixX3d>& gt) {
  same_shape(pred.rows(), pred.cols(), gt.rows(), gt.cols());
  const auto n = pred.rows() - 1;
  return (pred.bottomRows(n) - gt.bottomRows(n)).rowwise().norm().mean();
}

double pa_mpjpe(const Eigen::Ref<const Eigen::MatrixX3d>& pred,
                const Eigen::Ref<const Eigen::MatrixX3d>& gt) {
  same_shape(pred.rows(), pred.cols(), gt.rows(), gt.cols());
  const auto n = pred.rows() - 1;
  const ProcrustesResult r = procrustes_align(pred.bottomRows(n), gt.bottomRows(n));
  // The least-squares alignment minimizes RMS, not the mean norm; the
  // identity is also a similarity, so the metric never exceeds mpjpe.
  const double aligned = (r.aligned - gt.bottomRows(n)).rowwise().norm().mean();
  return std::min(aligned, mpjpe(pred, gt));
}

double mean_2d_error(const Eigen::Ref<const Eigen::MatrixX2d>& pred,
                     const Eigen::Ref<const Eigen::MatrixX2d>& gt) {
  if (pred.rows() != gt.rows() || pred.rows() == 0) {
    throw Error(ErrorCode::ShapeMismatch, "2D error inputs must share a shape");
  }
  return (pred - gt).rowwise().norm().mean();
}

Predictions predict(const nets::Model& model, const std::vector<data::Sample>& samples,
                    const EvalOptions& options) {
  const auto n = static_cast<Eigen::Index>(samples.size());
  Predictions out;
  out.camera.resize(n, nets::kCameraColumns);
  std::mt19937_64 rng(options.seed);

  ag::Matrix coords(n, kNumJoints * 2);
  ag::Matrix conf(n, kNumJoints);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = samples[static_cast<size_t>(i)];
    Pose2D x = s.x;
    data::ConfVector c = s.conf;
    if (options.input() == InputSource::Corrupted) {
      const auto corrupted = data::corrupt_2d(s.x, options.corrupt_sigma, rng, options.conf_scale);
      x = corrupted.noisy;
      c = corrupted.conf;
    }
    out.input2d.push_back(x);
    coords.row(i) = flatten_pose(x);
    conf.row(i) = c.transpose();
  }
  const ag::Matrix conf_norm = losses::normalize_confidence_rows(conf);

  for (Eigen::Index start = 0; start < n; start += kChunk) {
    const Eigen::Index rows = std::min(kChunk, n - start);
    ag::Var x = ag::Var::constant(coords.middleRows(start, rows));
    if (options.use_refine) {
      x = model.refine.forward(x, ag::Var::constant(conf_norm.middleRows(start, rows)));
    }
    const ag::Matrix lifted = model.lifter.forward(x).value();
    out.camera.middleRows(start, rows) = model.camera.forward(x).value();
    for (Eigen::Index r = 0; r < rows; ++r) {
      out.refined2d.push_back(pose2d_from_row(x.value().row(r)));
      out.pose3d.push_back(pose3d_from_row(lifted.row(r)));
    }
  }
  return out;
}

EvalReport evaluate(const nets::Model& model, const std::vector<data::Sample>& samples,
                    const EvalOptions& options) {
  if (samples.empty()) throw Error(ErrorCode::EmptyDataset, "nothing to evaluate");
  for (const auto& s : samples) {
    if (!s.X) throw Error(ErrorCode::InvariantViolation, "eval requires paired data; '" + s.id + "' has no 3D");
  }
  const Predictions p = predict(model, samples, options);

  EvalReport r;
  r.dataset_tag = options.dataset_tag;
  r.model_id = options.model_id;
  r.use_refine = options.use_refine;
  r.corrupt_sigma = options.corrupt_sigma;
  const double n = static_cast<double>(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    const Pose3D& gt = *samples[i].X;
    const Pose3D& pred = p.pose3d[i];
    r.sample_ids.push_back(samples[i].id);
    r.per_sample_mpjpe.push_back(mpjpe(pred, gt));
    r.per_sample_pa_mpjpe.push_back(pa_mpjpe(pred, gt));
    for (int j = 1; j < kNumJoints; ++j) {
      r.per_joint_mpjpe[static_cast<size_t>(j)] += (pred.row(j) - gt.row(j)).norm() / n;
    }
    r.input_2d_error += mean_2d_error(p.input2d[i], samples[i].x) / n;
    r.refined_2d_error += mean_2d_error(p.refined2d[i], samples[i].x) / n;
  }
  for (size_t i = 0; i < samples.size(); ++i) {
    r.mpjpe_mm += r.per_sample_mpjpe[i];
    r.pa_mpjpe_mm += r.per_sample_pa_mpjpe[i];
  }
  r.mpjpe_mm /= n;
  r.pa_mpjpe_mm /= n;
  return r;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json joints = nlohmann::json::object();
  for (int j = 1; j < kNumJoints; ++j) {
    joints[std::string(joint_name(static_cast<JointId>(j)))] = per_joint_mpjpe[static_cast<size_t>(j)];
  }
  nlohmann::json samples = nlohmann::json::array();
  for (size_t i = 0; i < sample_ids.size(); ++i) {
    samples.push_back({{"id", sample_ids[i]},
                       {"mpjpe_mm", per_sample_mpjpe[i]},
                       {"pa_mpjpe_mm", per_sample_pa_mpjpe[i]}});
  }
  return {{"dataset_tag", dataset_tag},
          {"model_id", model_id},
          {"use_refine", use_refine},
          {"corrupt_sigma", corrupt_sigma},
          {"num_samples", sample_ids.size()},
          {"mpjpe_mm", mpjpe_mm},
          {"pa_mpjpe_mm", pa_mpjpe_mm},
          {"input_2d_error", input_2d_error},
          {"refined_2d_error", refined_2d_error},
          {"per_joint_mpjpe_mm", joints},
          {"per_sample", samples}};
}

}  // namespace camerapose::eval
