#pragma once

// Three-stage schedule: RefineNet pretraining, lifter + GAN warm-up, then
// end-to-end training alternating (GAN, paired, weak) updates.

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "camerapose/autograd.hpp"
#include "camerapose/data.hpp"
#include "camerapose/losses.hpp"
#include "camerapose/nets.hpp"

namespace camerapose::train {

struct StageSchedule {
  int epochs = 1;
  double lr = 1e-4;
  std::vector<int> decay_epochs;  // lr is multiplied by 0.1 from each of these (0-based) epochs on

  // Learning rate in effect during 0-based epoch `epoch`.
  double lr_at(int epoch) const;
  void validate(const std::string& name) const;
};

struct TrainConfig {
  StageSchedule stage1{100, 1e-4, {30, 60, 90}};
  StageSchedule stage2{10, 1e-4, {}};
  StageSchedule stage3{75, 5e-4, {30, 60}};
  losses::LossWeights weights;
  nets::NetConfig nets;
  int batch_size = 64;
  int paired_ratio = 1;  // batches of each kind per schedule window
  int weak_ratio = 1;    // 0 disables weak data (ablation)
  std::uint64_t seed = 0;
  double corrupt_sigma = 0.02;  // on-the-fly 2D corruption for RefineNet inputs
  double conf_scale = 1.0;
  double generator_feedback = 0.1;  // weight of the lifter-error reward in the generator loss
  double adversarial_weak = 0.0;    // optional D_2D term on weak reprojections
  double gan_clip = 10.0;
  int disc_steps = 1;  // discriminator updates per generator update
  int max_batches_per_epoch = 0;  // 0: one full pass per epoch

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainData {
  std::vector<data::Sample> paired;
  std::vector<data::Sample> weak;
  std::vector<data::Sample> val;  // paired; drives best-epoch selection when non-empty
};

// Everything needed to continue a run exactly.
struct TrainState {
  int stage = 1;
  int epoch = 0;  // completed epochs within `stage`
  long long step = 0;
  std::map<std::string, ag::AdamState> optim;
  std::string rng;  // serialized engine
  std::map<std::string, nlohmann::json> streams;
  long long weak_consumed = 0;
  double best_metric = std::numeric_limits<double>::infinity();
  nlohmann::json best_model;  // null until a selection has been made
  std::vector<double> metric_window;  // per-epoch selection metric

  nlohmann::json to_json() const;
  static TrainState from_json(const nlohmann::json& j);
};

// One structured record per optimizer sub-step.
struct StepRecord {
  int stage = 0;
  int epoch = 0;
  long long step = 0;
  std::string substep;  // "refine", "disc", "gen", "lift", "paired", "weak"
  double lr = 0;
  std::map<std::string, std::optional<double>> values;

  nlohmann::json to_json() const;
};

class Trainer {
 public:
  Trainer(TrainConfig config, TrainData data);
  // Starts from an existing model (e.g. a later stage of an earlier run).
  Trainer(TrainConfig config, TrainData data, const nets::Model& model);

  // Runs epochs of `stage` until it completes or `max_epochs` have run.
  // Returns the number of epochs run.
  int run_stage(int stage, int max_epochs = std::numeric_limits<int>::max());
  // Runs the requested stages in order from the current state.
  void run(const std::vector<int>& stages);

  nlohmann::json checkpoint() const;
  void restore(const nlohmann::json& checkpoint);
  void save_checkpoint(const std::string& path) const;
  void load_checkpoint(const std::string& path);
  // Checkpoint rewritten after every completed epoch; named in NumericAbort.
  void set_checkpoint_path(std::string path) { checkpoint_path_ = std::move(path); }

  void set_log(std::ostream* log) { log_ = log; }
  void set_step_hook(std::function<void(const StepRecord&)> hook) { hook_ = std::move(hook); }

  const TrainConfig& config() const { return config_; }
  // Replaces the configuration of a restored run; network shapes must match.
  void reconfigure(const TrainConfig& config);
  const TrainState& state() const { return state_; }
  nets::Model& model() { return model_; }
  const nets::Model& model() const { return model_; }
  // Every record emitted so far, in order.
  const std::vector<StepRecord>& records() const { return records_; }

 private:
  void begin_stage(int stage);
  void run_epoch();
  void finish_epoch(double metric);
  void finish_stage();

  void refine_step(const std::vector<size_t>& idx, double lr);
  void gan_step(const std::vector<size_t>& idx, double lr, bool with_weak_pool);
  void lift_step(const std::vector<size_t>& idx, double lr);
  void paired_step(const std::vector<size_t>& idx, double lr);
  void weak_step(const std::vector<size_t>& idx, double lr);

  double selection_metric();
  void update(const std::string& key, ag::ParamSet& params, double lr, double clip = 0.0);
  void zero_all_grads();
  void emit(StepRecord record);
  void watchdog(const std::string& what, double value);
  std::mt19937_64& rng();
  data::BatchStream& stream(const std::string& name, size_t n);

  TrainConfig config_;
  TrainData data_;
  nets::Model model_;
  TrainState state_;
  std::mt19937_64 rng_;
  std::map<std::string, data::BatchStream> streams_;
  std::vector<Pose2D> stage1_pool_;
  ag::Matrix weak_pool_;  // last weak reprojections (detached), for D_2D
  std::vector<StepRecord> records_;
  struct AugmentedCache {
    ag::Matrix poses3d, poses2d, camera;
  };
  std::optional<AugmentedCache> last_aug_;
  std::ostream* log_ = nullptr;
  std::function<void(const StepRecord&)> hook_;
  std::string checkpoint_path_;
};

// Loss-side unit conversions: 3D poses and camera translations enter the
// 3D and camera losses in metres.
inline constexpr double kLossMetresPerMm = 1e-3;

}  // namespace camerapose::train
