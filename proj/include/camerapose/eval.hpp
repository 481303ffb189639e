#pragma once

// Pose metrics and the evaluation harness. Poses are root-relative; the
// pelvis is identically zero and is left out of every joint mean.

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "camerapose/data.hpp"
#include "camerapose/nets.hpp"
#include "camerapose/skeleton.hpp"

namespace camerapose::eval {

// Mean Euclidean joint error in mm over all joints except row 0.
double mpjpe(const Eigen::Ref<const Eigen::MatrixX3d>& pred,
             const Eigen::Ref<const Eigen::MatrixX3d>& gt);
// mpjpe after similarity-aligning pred onto gt over the same joints, using
// the least-squares alignment or the identity, whichever scores lower.
double pa_mpjpe(const Eigen::Ref<const Eigen::MatrixX3d>& pred,
                const Eigen::Ref<const Eigen::MatrixX3d>& gt);
// Mean Euclidean 2D error over all joints.
double mean_2d_error(const Eigen::Ref<const Eigen::MatrixX2d>& pred,
                     const Eigen::Ref<const Eigen::MatrixX2d>& gt);

enum class InputSource { Clean, Corrupted };

struct EvalOptions {
  bool use_refine = true;
  double corrupt_sigma = 0.0;  // > 0 selects corrupted input
  double conf_scale = 1.0;
  std::uint64_t seed = 0;      // corruption stream
  std::string dataset_tag;
  std::string model_id;

  InputSource input() const { return corrupt_sigma > 0 ? InputSource::Corrupted : InputSource::Clean; }
};

struct EvalReport {
  double mpjpe_mm = 0;
  double pa_mpjpe_mm = 0;
  double input_2d_error = 0;    // network input vs annotation, normalized units
  double refined_2d_error = 0;  // lifter input vs annotation
  std::array<double, kNumJoints> per_joint_mpjpe{};  // pelvis entry stays 0
  std::vector<std::string> sample_ids;
  std::vector<double> per_sample_mpjpe;
  std::vector<double> per_sample_pa_mpjpe;
  std::string dataset_tag;
  std::string model_id;
  bool use_refine = true;
  double corrupt_sigma = 0;

  nlohmann::json to_json() const;
};

// Throws InvariantViolation ("eval requires paired data") on weak samples.
EvalReport evaluate(const nets::Model& model, const std::vector<data::Sample>& samples,
                    const EvalOptions& options);

// Network predictions for a list of samples, batched.
struct Predictions {
  std::vector<Pose2D> input2d;
  std::vector<Pose2D> refined2d;
  std::vector<Pose3D> pose3d;
  ag::Matrix camera;  // N x 7
};
Predictions predict(const nets::Model& model, const std::vector<data::Sample>& samples,
                    const EvalOptions& options);

}  // namespace camerapose::eval
