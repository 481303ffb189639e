#pragma once

// Training objectives. Batched losses take one sample per row; 2D poses are
// joint-major flattened (B x 2J), 3D poses likewise (B x 3J), cameras use the
// nets::CameraColumn layout (B x 7).

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "camerapose/autograd.hpp"
#include "camerapose/nets.hpp"

namespace camerapose::losses {

using ag::Var;

struct LossWeights {
  double cam = 0.01;
  double pose2d_paired = 0.5;
  double pose2d_weak = 0.2;
  double pose3d = 1.0;
  double ref_paired = 1.0;
  double ref_weak = 1.0;

  void validate() const;
  nlohmann::json to_json() const;
  static LossWeights from_json(const nlohmann::json& j);
};

enum class DatasetKind { Paired, Weak, Augmented };
std::string_view to_string(DatasetKind kind);

struct NormalizedConfidence {
  Eigen::VectorXd weights;
  bool fallback = false;  // all scores were zero; weights are uniform
};

// c'_j = c_j / sum_k c_k.
NormalizedConfidence normalize_confidence(const Eigen::Ref<const Eigen::VectorXd>& conf);
// Row-wise normalize_confidence over a B x J matrix.
ag::Matrix normalize_confidence_rows(const ag::Matrix& conf);

// (1 / (B J)) sum_ij c'_ij |x_ij - x^_ij|^2
Var refinement_loss(const Var& pred, const Var& gt, const ag::Matrix& conf_norm);

enum class DepthPolicy {
  Throw,  // BehindCamera naming sample and joint
  Clamp,  // reciprocal depth clamped at kMinDepthMm, zero gradient past the clamp
};

// Differentiable pinhole projection of B x 3J poses through B x 7 cameras.
Var reproject(const Var& poses3d, const Var& camera, DepthPolicy policy = DepthPolicy::Throw);

// Mean over samples and joints of the squared 2D reprojection error.
Var reprojection_loss(const Var& poses3d, const Var& camera, const Var& gt2d,
                      DepthPolicy policy = DepthPolicy::Throw);

// Mean over samples of |K - K^|^2 + |t - t^|^2 over the 7 camera scalars.
Var camera_loss(const Var& pred, const std::optional<Var>& gt);

// Mean over samples and joints of the squared 3D error.
Var pose3d_loss(const Var& pred, const Var& gt);

struct LossComponents {
  std::optional<Var> refine;
  std::optional<Var> camera;
  std::optional<Var> reprojection;
  std::optional<Var> pose3d;
};

// lambda_ref L_ref + lambda_cam L_cam + lambda_2D L_2D + lambda_3D L_3D
Var paired_total(const LossComponents& c, const LossWeights& w);
// lambda_ref' L_ref + lambda_2D' L_2D; throws ComponentKindMismatch if a
// camera or 3D term is supplied.
Var weak_total(const LossComponents& c, const LossWeights& w);

struct BatchLossReport {
  DatasetKind kind = DatasetKind::Paired;
  Eigen::Index batch_size = 0;
  std::optional<double> refine, camera, reprojection, pose3d;
  double total = 0.0;

  nlohmann::json to_json() const;
};

BatchLossReport make_report(DatasetKind kind, Eigen::Index batch_size, const LossComponents& c,
                            const Var& total);

// Least-squares GAN terms. Real target is 1, fake target is 0.
Var lsgan_discriminator_loss(const Var& real_scores, const Var& fake_scores);
Var lsgan_generator_loss(const Var& fake_scores);

struct LsganLosses {
  Var dis_2d;
  Var dis_3d;
  Var gen;  // generator side, 2D + 3D
};

// real2d / real3d: poses from the paired set; fake2d_pool: augmented 2D and
// reprojected weak 2D, stacked; fake3d: augmented 3D. Pass detached fakes when
// updating the discriminators.
LsganLosses lsgan_losses(const nets::KcsDiscriminator& d2d, const nets::KcsDiscriminator& d3d,
                         const Var& real2d, const Var& real3d, const std::vector<Var>& fake2d_pool,
                         const Var& fake3d);

}  // namespace camerapose::losses
