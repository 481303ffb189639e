#include "camerapose/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "camerapose/augment.hpp"
#include "camerapose/error.hpp"
#include "camerapose/eval.hpp"

namespace camerapose::train {

using ag::Var;

namespace {

inline constexpr const char* kCheckpointFormat = "camerapose-checkpoint";
inline constexpr int kCheckpointVersion = 1;

std::uint64_t mix(std::uint64_t seed, const std::string& name) {
  return augment::noise_seed(seed, name, 0);
}

std::string engine_to_string(const std::mt19937_64& e) {
  std::ostringstream os;
  os << e;
  return os.str();
}

void engine_from_string(std::mt19937_64& e, const std::string& s) {
  std::istringstream is(s);
  is >> e;
  if (!is) throw Error(ErrorCode::ParseError, "corrupt RNG state in checkpoint");
}

nlohmann::json schedule_to_json(const StageSchedule& s) {
  return {{"epochs", s.epochs}, {"lr", s.lr}, {"decay_epochs", s.decay_epochs}};
}

StageSchedule schedule_from_json(const nlohmann::json& j, StageSchedule s) {
  s.epochs = j.value("epochs", s.epochs);
  s.lr = j.value("lr", s.lr);
  if (j.contains("decay_epochs")) s.decay_epochs = j.at("decay_epochs").get<std::vector<int>>();
  return s;
}

ag::Matrix pose_rows(const std::vector<data::Sample>& samples, const std::vector<size_t>& idx) {
  ag::Matrix m(static_cast<Eigen::Index>(idx.size()), kNumJoints * 3);
  for (size_t i = 0; i < idx.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = flatten_pose(*samples[idx[i]].X);
  return m;
}

ag::Matrix coord_rows(const std::vector<data::Sample>& samples, const std::vector<size_t>& idx) {
  ag::Matrix m(static_cast<Eigen::Index>(idx.size()), kNumJoints * 2);
  for (size_t i = 0; i < idx.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = flatten_pose(samples[idx[i]].x);
  return m;
}

// Ground-truth camera rows in the CameraColumn layout.
ag::Matrix camera_rows(const std::vector<data::Sample>& samples, const std::vector<size_t>& idx) {
  ag::Matrix m(static_cast<Eigen::Index>(idx.size()), nets::kCameraColumns);
  for (size_t i = 0; i < idx.size(); ++i) {
    const auto& s = samples[idx[i]];
    m.row(static_cast<Eigen::Index>(i)) << s.K->fx, s.K->fy, s.K->cx, s.K->cy, s.t->tx, s.t->ty, s.t->tz;
  }
  return m;
}

struct CorruptedBatch {
  ag::Matrix noisy;
  ag::Matrix conf_norm;
};

CorruptedBatch corrupt_rows(const ag::Matrix& clean, double sigma, double conf_scale,
                            std::mt19937_64& rng) {
  CorruptedBatch out{clean, ag::Matrix(clean.rows(), kNumJoints)};
  for (Eigen::Index i = 0; i < clean.rows(); ++i) {
    const auto c = data::corrupt_2d(pose2d_from_row(clean.row(i)), sigma, rng, conf_scale);
    out.noisy.row(i) = flatten_pose(c.noisy);
    out.conf_norm.row(i) = c.conf.transpose();
  }
  out.conf_norm = losses::normalize_confidence_rows(out.conf_norm);
  return out;
}

// Converts camera rows so that translation columns are in metres.
Var camera_in_loss_units(const Var& camera) {
  Eigen::RowVectorXd u(nets::kCameraColumns);
  u << 1, 1, 1, 1, kLossMetresPerMm, kLossMetresPerMm, kLossMetresPerMm;
  return camera * Var::constant(u.replicate(camera.rows(), 1));
}

Var pose3d_loss_m(const Var& pred_mm, const Var& gt_mm) {
  return losses::pose3d_loss(ag::scale(pred_mm, kLossMetresPerMm), ag::scale(gt_mm, kLossMetresPerMm));
}

ag::Matrix stack(const ag::Matrix& a, const ag::Matrix& b) {
  ag::Matrix m(a.rows() + b.rows(), a.cols());
  m << a, b;
  return m;
}

}  // namespace

// ---------------------------------------------------------------- config

double StageSchedule::lr_at(int epoch) const {
  double lr_now = lr;
  for (int d : decay_epochs) {
    if (epoch >= d) lr_now *= 0.1;
  }
  return lr_now;
}

void StageSchedule::validate(const std::string& name) const {
  if (epochs <= 0) throw Error(ErrorCode::ConfigError, name + ": epochs must be positive");
  if (!(lr > 0)) throw Error(ErrorCode::ConfigError, name + ": lr must be positive");
  for (int d : decay_epochs) {
    if (d <= 0 || d >= epochs) {
      throw Error(ErrorCode::ConfigError,
                  name + ": decay epoch " + std::to_string(d) + " outside (0, " + std::to_string(epochs) + ")");
    }
  }
}

void TrainConfig::validate() const {
  stage1.validate("stage1");
  stage2.validate("stage2");
  stage3.validate("stage3");
  weights.validate();
  auto fail = [](const std::string& what) { throw Error(ErrorCode::ConfigError, what); };
  if (batch_size <= 0) fail("batch_size must be positive");
  if (paired_ratio <= 0 || weak_ratio < 0) fail("paired_ratio must be > 0 and weak_ratio >= 0");
  if (!(corrupt_sigma >= 0)) fail("corrupt_sigma must be >= 0");
  if (!(conf_scale > 0)) fail("conf_scale must be > 0");
  if (!(generator_feedback >= 0) || !(adversarial_weak >= 0)) fail("GAN weights must be >= 0");
  if (!(gan_clip > 0)) fail("gan_clip must be > 0");
  if (disc_steps <= 0) fail("disc_steps must be positive");
  if (max_batches_per_epoch < 0) fail("max_batches_per_epoch must be >= 0");
  for (int w : {nets.refine_width, nets.lifter_width, nets.camera_width, nets.generator_width,
                nets.discriminator_width}) {
    if (w <= 0) fail("network widths must be positive");
  }
  if (!(nets.lifter_output_scale_mm > 0)) fail("lifter_output_scale_mm must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"stage1", schedule_to_json(stage1)},
          {"stage2", schedule_to_json(stage2)},
          {"stage3", schedule_to_json(stage3)},
          {"weights", weights.to_json()},
          {"nets", nets.to_json()},
          {"batch_size", batch_size},
          {"paired_ratio", paired_ratio},
          {"weak_ratio", weak_ratio},
          {"seed", seed},
          {"corrupt_sigma", corrupt_sigma},
          {"conf_scale", conf_scale},
          {"generator_feedback", generator_feedback},
          {"adversarial_weak", adversarial_weak},
          {"gan_clip", gan_clip},
          {"disc_steps", disc_steps},
          {"max_batches_per_epoch", max_batches_per_epoch}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known = {
      "stage1",     "stage2",       "stage3",      "weights",          "nets",
      "batch_size", "paired_ratio", "weak_ratio",  "seed",             "corrupt_sigma",
      "conf_scale", "generator_feedback", "adversarial_weak", "gan_clip", "disc_steps",
      "max_batches_per_epoch"};
  if (!j.is_object()) throw Error(ErrorCode::ConfigError, "train config must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw Error(ErrorCode::ConfigError, "unknown train config key '" + key + "'");
    }
  }
  TrainConfig c;
  try {
    if (j.contains("stage1")) c.stage1 = schedule_from_json(j["stage1"], c.stage1);
    if (j.contains("stage2")) c.stage2 = schedule_from_json(j["stage2"], c.stage2);
    if (j.contains("stage3")) c.stage3 = schedule_from_json(j["stage3"], c.stage3);
    if (j.contains("weights")) c.weights = losses::LossWeights::from_json(j["weights"]);
    if (j.contains("nets")) c.nets = nets::NetConfig::from_json(j["nets"]);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.paired_ratio = j.value("paired_ratio", c.paired_ratio);
    c.weak_ratio = j.value("weak_ratio", c.weak_ratio);
    c.seed = j.value("seed", c.seed);
    c.corrupt_sigma = j.value("corrupt_sigma", c.corrupt_sigma);
    c.conf_scale = j.value("conf_scale", c.conf_scale);
    c.generator_feedback = j.value("generator_feedback", c.generator_feedback);
    c.adversarial_weak = j.value("adversarial_weak", c.adversarial_weak);
    c.gan_clip = j.value("gan_clip", c.gan_clip);
    c.disc_steps = j.value("disc_steps", c.disc_steps);
    c.max_batches_per_epoch = j.value("max_batches_per_epoch", c.max_batches_per_epoch);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------- state

nlohmann::json TrainState::to_json() const {
  nlohmann::json optim_json = nlohmann::json::object();
  for (const auto& [k, v] : optim) optim_json[k] = v.to_json();
  nlohmann::json streams_json = nlohmann::json::object();
  for (const auto& [k, v] : streams) streams_json[k] = v;
  return {{"stage", stage},
          {"epoch", epoch},
          {"step", step},
          {"optim", optim_json},
          {"rng", rng},
          {"streams", streams_json},
          {"weak_consumed", weak_consumed},
          {"best_metric", std::isfinite(best_metric) ? nlohmann::json(best_metric) : nlohmann::json(nullptr)},
          {"best_model", best_model},
          {"metric_window", metric_window}};
}

TrainState TrainState::from_json(const nlohmann::json& j) {
  TrainState s;
  s.stage = j.at("stage").get<int>();
  s.epoch = j.at("epoch").get<int>();
  s.step = j.at("step").get<long long>();
  for (const auto& [k, v] : j.at("optim").items()) s.optim[k] = ag::AdamState::from_json(v);
  s.rng = j.at("rng").get<std::string>();
  for (const auto& [k, v] : j.at("streams").items()) s.streams[k] = v;
  s.weak_consumed = j.at("weak_consumed").get<long long>();
  const auto& best = j.at("best_metric");
  s.best_metric = best.is_null() ? std::numeric_limits<double>::infinity() : best.get<double>();
  s.best_model = j.at("best_model");
  s.metric_window = j.at("metric_window").get<std::vector<double>>();
  return s;
}

nlohmann::json StepRecord::to_json() const {
  nlohmann::json v = nlohmann::json::object();
  for (const auto& [k, x] : values) v[k] = x ? nlohmann::json(*x) : nlohmann::json(nullptr);
  return {{"stage", stage}, {"epoch", epoch}, {"step", step}, {"substep", substep}, {"lr", lr}, {"values", v}};
}

// ---------------------------------------------------------------- trainer

Trainer::Trainer(TrainConfig config, TrainData data)
    : Trainer(config, std::move(data), nets::Model(config.nets, config.seed)) {}

Trainer::Trainer(TrainConfig config, TrainData data, const nets::Model& model)
    : config_(std::move(config)), data_(std::move(data)), model_(model), rng_(mix(config_.seed, "train")) {
  config_.validate();
  if (data_.paired.empty()) throw Error(ErrorCode::EmptyDataset, "training needs paired samples");
  for (const auto* set : {&data_.paired, &data_.val}) {
    for (const auto& s : *set) {
      if (!s.paired()) throw Error(ErrorCode::InvariantViolation, "sample '" + s.id + "' is not paired");
    }
  }
  for (const auto& s : data_.paired) stage1_pool_.push_back(s.x);
  for (const auto& s : data_.weak) stage1_pool_.push_back(s.x);
}

std::mt19937_64& Trainer::rng() { return rng_; }

void Trainer::reconfigure(const TrainConfig& config) {
  config.validate();
  if (config.nets.to_json() != config_.nets.to_json()) {
    throw Error(ErrorCode::ConfigError, "cannot change network shapes of a restored run");
  }
  config_ = config;
}

data::BatchStream& Trainer::stream(const std::string& name, size_t n) {
  auto it = streams_.find(name);
  if (it != streams_.end()) return it->second;
  auto [pos, inserted] = streams_.try_emplace(name, n, static_cast<size_t>(config_.batch_size),
                                              mix(config_.seed, name));
  if (auto saved = state_.streams.find(name); saved != state_.streams.end()) pos->second.restore(saved->second);
  return pos->second;
}

void Trainer::zero_all_grads() {
  for (auto& [name, params] : model_.groups()) params->zero_grad();
}

void Trainer::update(const std::string& key, ag::ParamSet& params, double lr, double clip) {
  auto& st = state_.optim[key];
  st.lr = lr;
  if (clip > 0) params.clip_grad_norm(clip);
  ag::adam_step(params, st);
}

void Trainer::watchdog(const std::string& what, double value) {
  if (std::isfinite(value)) return;
  throw Error(ErrorCode::NumericAbort,
              "non-finite " + what + " at stage " + std::to_string(state_.stage) + " epoch " +
                  std::to_string(state_.epoch) + " step " + std::to_string(state_.step) +
                  "; last good checkpoint: " + (checkpoint_path_.empty() ? "none" : checkpoint_path_));
}

void Trainer::emit(StepRecord record) {
  record.stage = state_.stage;
  record.epoch = state_.epoch;
  record.step = state_.step;
  if (log_) *log_ << record.to_json().dump() << '\n';
  if (hook_) hook_(record);
  records_.push_back(std::move(record));
}

void Trainer::begin_stage(int stage) {
  state_.stage = stage;
  state_.epoch = 0;
  state_.best_metric = std::numeric_limits<double>::infinity();
  state_.best_model = nullptr;
  state_.metric_window.clear();
}

int Trainer::run_stage(int stage, int max_epochs) {
  if (stage < 1 || stage > 3) throw Error(ErrorCode::ConfigError, "stage must be 1, 2 or 3");
  if (stage < state_.stage) {
    throw Error(ErrorCode::ConfigError, "stage " + std::to_string(stage) + " requested after stage " +
                                            std::to_string(state_.stage));
  }
  if (stage > state_.stage) begin_stage(stage);
  const StageSchedule& sched = stage == 1 ? config_.stage1 : stage == 2 ? config_.stage2 : config_.stage3;
  int ran = 0;
  while (state_.epoch < sched.epochs && ran < max_epochs) {
    run_epoch();
    ++ran;
    if (!checkpoint_path_.empty()) save_checkpoint(checkpoint_path_);
  }
  return ran;
}

void Trainer::run(const std::vector<int>& stages) {
  for (int s : stages) run_stage(s);
}

void Trainer::run_epoch() {
  const int stage = state_.stage;
  const StageSchedule& sched = stage == 1 ? config_.stage1 : stage == 2 ? config_.stage2 : config_.stage3;
  const double lr = sched.lr_at(state_.epoch);
  weak_pool_.resize(0, 0);
  last_aug_.reset();

  auto cap = [&](size_t per_pass) {
    if (config_.max_batches_per_epoch > 0) {
      return std::min(per_pass, static_cast<size_t>(config_.max_batches_per_epoch));
    }
    return per_pass;
  };

  if (stage == 1) {
    auto& s = stream("stage1", stage1_pool_.size());
    const size_t n = cap(s.batches_per_pass());
    for (size_t b = 0; b < n; ++b) {
      refine_step(s.next(), lr);
      ++state_.step;
    }
  } else if (stage == 2) {
    auto& s = stream("stage2.paired", data_.paired.size());
    const size_t n = cap(s.batches_per_pass());
    for (size_t b = 0; b < n; ++b) {
      const auto idx = s.next();
      gan_step(idx, lr, false);
      lift_step(idx, lr);
      ++state_.step;
    }
  } else {
    auto& paired = stream("stage3.paired", data_.paired.size());
    const bool use_weak = config_.weak_ratio > 0 && !data_.weak.empty();
    const size_t n_paired = cap(paired.batches_per_pass());
    const size_t window = static_cast<size_t>(config_.paired_ratio + (use_weak ? config_.weak_ratio : 0));
    const size_t windows = (n_paired + static_cast<size_t>(config_.paired_ratio) - 1) /
                           static_cast<size_t>(config_.paired_ratio);
    const auto schedule =
        data::mixed_schedule(config_.paired_ratio, use_weak ? config_.weak_ratio : 0, windows * window);
    size_t done = 0;
    for (data::BatchKind kind : schedule) {
      if (kind == data::BatchKind::Paired) {
        if (done == n_paired) break;
        const auto idx = paired.next();
        gan_step(idx, lr, true);
        paired_step(idx, lr);
        ++done;
        ++state_.step;
      } else {
        weak_step(stream("stage3.weak", data_.weak.size()).next(), lr);
      }
    }
  }

  if (!model_.all_finite()) watchdog("parameters", std::nan(""));
  finish_epoch(selection_metric());
}

double Trainer::selection_metric() {
  if (data_.val.empty() || state_.stage == 2) return std::nan("");
  if (state_.stage == 1) {
    std::mt19937_64 val_rng(mix(config_.seed, "stage1.val"));
    std::vector<size_t> idx(data_.val.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const ag::Matrix clean = coord_rows(data_.val, idx);
    const CorruptedBatch c = corrupt_rows(clean, config_.corrupt_sigma, config_.conf_scale, val_rng);
    const Var pred = model_.refine.forward(Var::constant(c.noisy), Var::constant(c.conf_norm));
    return losses::refinement_loss(pred, Var::constant(clean), c.conf_norm).item();
  }
  eval::EvalOptions opts;
  opts.use_refine = true;
  return eval::evaluate(model_, data_.val, opts).mpjpe_mm;
}

void Trainer::finish_epoch(double metric) {
  StepRecord r;
  r.substep = "epoch";
  r.lr = 0;
  r.values["val_metric"] = std::isnan(metric) ? std::nullopt : std::optional<double>(metric);
  r.values["weak_consumed"] = static_cast<double>(state_.weak_consumed);
  emit(r);

  if (!std::isnan(metric)) {
    state_.metric_window.push_back(metric);
    if (metric < state_.best_metric) {
      state_.best_metric = metric;
      state_.best_model = model_.to_json();
    }
  }
  ++state_.epoch;
  const StageSchedule& sched =
      state_.stage == 1 ? config_.stage1 : state_.stage == 2 ? config_.stage2 : config_.stage3;
  if (state_.epoch == sched.epochs) finish_stage();
}

void Trainer::finish_stage() {
  if (!state_.best_model.is_null()) {
    model_.assign(nets::Model::from_json(state_.best_model));
    state_.best_model = nullptr;
  }
}

// ---------------------------------------------------------------- sub-steps

void Trainer::refine_step(const std::vector<size_t>& idx, double lr) {
  ag::Matrix clean(static_cast<Eigen::Index>(idx.size()), kNumJoints * 2);
  for (size_t i = 0; i < idx.size(); ++i) clean.row(static_cast<Eigen::Index>(i)) = flatten_pose(stage1_pool_[idx[i]]);
  const CorruptedBatch c = corrupt_rows(clean, config_.corrupt_sigma, config_.conf_scale, rng_);
  const Var pred = model_.refine.forward(Var::constant(c.noisy), Var::constant(c.conf_norm));
  const Var loss = losses::refinement_loss(pred, Var::constant(clean), c.conf_norm);
  watchdog("refinement loss", loss.item());
  zero_all_grads();
  ag::backward(loss);
  update("stage1.refine", model_.refine.params(), lr);

  StepRecord r;
  r.substep = "refine";
  r.lr = lr;
  r.values["loss_ref"] = loss.item();
  emit(r);
}

void Trainer::gan_step(const std::vector<size_t>& idx, double lr, bool with_weak_pool) {
  const auto n = static_cast<Eigen::Index>(idx.size());
  const Var X = Var::constant(pose_rows(data_.paired, idx));
  const Var real2d = Var::constant(coord_rows(data_.paired, idx));
  const ag::Matrix cams = camera_rows(data_.paired, idx);
  ag::Matrix noise(n, nets::kNoiseDim);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = normal(rng_);

  const nets::GeneratorBatch g = model_.generator.forward(X, Var::constant(noise));
  const augment::AugmentedBatch aug = augment::augment_batch(X, g, cams.leftCols(4));

  const std::string prefix = "stage" + std::to_string(state_.stage) + ".";
  Var dis2d, dis3d;
  for (int k = 0; k < config_.disc_steps; ++k) {
    std::vector<Var> pool = {aug.poses2d.detach()};
    if (with_weak_pool && weak_pool_.rows() > 0) pool.push_back(Var::constant(weak_pool_));
    const losses::LsganLosses l =
        losses::lsgan_losses(model_.disc2d, model_.disc3d, real2d, X, pool, aug.poses3d.detach());
    dis2d = l.dis_2d;
    dis3d = l.dis_3d;
    const Var total = dis2d + dis3d;
    watchdog("discriminator loss", total.item());
    zero_all_grads();
    ag::backward(total);
    update(prefix + "disc2d", model_.disc2d.params(), lr, config_.gan_clip);
    update(prefix + "disc3d", model_.disc3d.params(), lr, config_.gan_clip);
  }
  StepRecord rd;
  rd.substep = "disc";
  rd.lr = lr;
  rd.values["loss_dis_2d"] = dis2d.item();
  rd.values["loss_dis_3d"] = dis3d.item();
  emit(rd);

  const Var adv = losses::lsgan_generator_loss(model_.disc2d.forward(aug.poses2d)) +
                  losses::lsgan_generator_loss(model_.disc3d.forward(aug.poses3d));
  const Var feedback = pose3d_loss_m(model_.lifter.forward(aug.poses2d), aug.poses3d);
  const Var gen_loss = adv - ag::scale(feedback, config_.generator_feedback);
  watchdog("generator loss", gen_loss.item());
  zero_all_grads();
  ag::backward(gen_loss);
  update(prefix + "generator", model_.generator.params(), lr, config_.gan_clip);

  last_aug_ = AugmentedCache{aug.poses3d.value(), aug.poses2d.value(), aug.camera.value()};

  StepRecord rg;
  rg.substep = "gen";
  rg.lr = lr;
  rg.values["loss_gen_adv"] = adv.item();
  rg.values["loss_feedback"] = feedback.item();
  rg.values["loss_gen"] = gen_loss.item();
  emit(rg);
}

void Trainer::lift_step(const std::vector<size_t>& idx, double lr) {
  const Var x = Var::constant(coord_rows(data_.paired, idx));
  const Var X = Var::constant(pose_rows(data_.paired, idx));
  losses::LossComponents c;
  c.pose3d = pose3d_loss_m(model_.lifter.forward(x), X);
  const Var total = ag::scale(*c.pose3d, config_.weights.pose3d);
  watchdog("3D loss", total.item());
  zero_all_grads();
  ag::backward(total);
  update("stage2.lifter", model_.lifter.params(), lr);

  StepRecord r;
  r.substep = "lift";
  r.lr = lr;
  const auto report = losses::make_report(losses::DatasetKind::Paired, x.rows(), c, total);
  r.values["loss_3d"] = report.pose3d;
  r.values["total"] = report.total;
  emit(r);
}

void Trainer::paired_step(const std::vector<size_t>& idx, double lr) {
  ag::Matrix clean = coord_rows(data_.paired, idx);
  ag::Matrix poses = pose_rows(data_.paired, idx);
  ag::Matrix cams = camera_rows(data_.paired, idx);
  const Eigen::Index n_real = clean.rows();
  if (last_aug_) {
    clean = stack(clean, last_aug_->poses2d);
    poses = stack(poses, last_aug_->poses3d);
    cams = stack(cams, last_aug_->camera);
  }
  const CorruptedBatch c = corrupt_rows(clean, config_.corrupt_sigma, config_.conf_scale, rng_);
  const Var gt2d = Var::constant(clean);
  const Var refined = model_.refine.forward(Var::constant(c.noisy), Var::constant(c.conf_norm));
  const Var lifted = model_.lifter.forward(refined);
  const Var camera = model_.camera.forward(refined);

  losses::LossComponents comp;
  comp.refine = losses::refinement_loss(refined, gt2d, c.conf_norm);
  comp.camera = losses::camera_loss(camera_in_loss_units(camera),
                                    camera_in_loss_units(Var::constant(cams)));
  comp.reprojection = losses::reprojection_loss(lifted, camera, gt2d, losses::DepthPolicy::Clamp);
  comp.pose3d = pose3d_loss_m(lifted, Var::constant(poses));
  const Var total = losses::paired_total(comp, config_.weights);
  watchdog("paired loss", total.item());
  zero_all_grads();
  ag::backward(total);
  update("stage3.refine", model_.refine.params(), lr);
  update("stage3.lifter", model_.lifter.params(), lr);
  update("stage3.camera", model_.camera.params(), lr);

  StepRecord r;
  r.substep = "paired";
  r.lr = lr;
  const auto report = losses::make_report(losses::DatasetKind::Paired, clean.rows(), comp, total);
  r.values["loss_ref"] = report.refine;
  r.values["loss_cam"] = report.camera;
  r.values["loss_2d"] = report.reprojection;
  r.values["loss_3d"] = report.pose3d;
  r.values["total"] = report.total;
  r.values["augmented_rows"] = static_cast<double>(clean.rows() - n_real);
  emit(r);
}

void Trainer::weak_step(const std::vector<size_t>& idx, double lr) {
  const ag::Matrix clean = coord_rows(data_.weak, idx);
  const CorruptedBatch c = corrupt_rows(clean, config_.corrupt_sigma, config_.conf_scale, rng_);
  const Var gt2d = Var::constant(clean);
  const Var refined = model_.refine.forward(Var::constant(c.noisy), Var::constant(c.conf_norm));
  const Var lifted = model_.lifter.forward(refined);
  const Var camera = model_.camera.forward(refined);
  const Var reprojected = losses::reproject(lifted, camera, losses::DepthPolicy::Clamp);

  losses::LossComponents comp;
  comp.refine = losses::refinement_loss(refined, gt2d, c.conf_norm);
  comp.reprojection = ag::scale(ag::sum(ag::square(reprojected - gt2d)),
                                1.0 / static_cast<double>(clean.rows() * kNumJoints));
  Var total = losses::weak_total(comp, config_.weights);
  std::optional<double> adversarial;
  if (config_.adversarial_weak > 0) {
    const Var adv = losses::lsgan_generator_loss(model_.disc2d.forward(reprojected));
    adversarial = adv.item();
    total = total + ag::scale(adv, config_.adversarial_weak);
  }
  watchdog("weak loss", total.item());
  zero_all_grads();
  ag::backward(total);
  update("stage3.refine", model_.refine.params(), lr);
  update("stage3.lifter", model_.lifter.params(), lr);
  update("stage3.camera", model_.camera.params(), lr);
  weak_pool_ = reprojected.value();
  state_.weak_consumed += static_cast<long long>(idx.size());

  StepRecord r;
  r.substep = "weak";
  r.lr = lr;
  const auto report = losses::make_report(losses::DatasetKind::Weak, clean.rows(), comp, total);
  r.values["loss_ref"] = report.refine;
  r.values["loss_cam"] = report.camera;
  r.values["loss_2d"] = report.reprojection;
  r.values["loss_3d"] = report.pose3d;
  r.values["loss_adv"] = adversarial;
  r.values["total"] = report.total;
  emit(r);
}

// ---------------------------------------------------------------- checkpoints

nlohmann::json Trainer::checkpoint() const {
  TrainState st = state_;
  st.rng = engine_to_string(rng_);
  for (const auto& [name, s] : streams_) st.streams[name] = s.state();
  return {{"format", kCheckpointFormat},
          {"version", kCheckpointVersion},
          {"config", config_.to_json()},
          {"model", model_.to_json()},
          {"state", st.to_json()}};
}

void Trainer::restore(const nlohmann::json& j) {
  if (j.value("format", std::string()) != kCheckpointFormat || j.value("version", 0) != kCheckpointVersion) {
    throw Error(ErrorCode::ParseError, "not a camerapose checkpoint");
  }
  config_ = TrainConfig::from_json(j.at("config"));
  model_ = nets::Model::from_json(j.at("model"));
  state_ = TrainState::from_json(j.at("state"));
  engine_from_string(rng_, state_.rng);
  streams_.clear();
  weak_pool_.resize(0, 0);
  last_aug_.reset();
}

void Trainer::save_checkpoint(const std::string& path) const {
  const auto bytes = nlohmann::json::to_cbor(checkpoint());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot open " + tmp + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::IoError, "write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot move checkpoint into place at " + path);
}

void Trainer::load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  nlohmann::json j;
  try {
    j = nlohmann::json::from_cbor(bytes);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, path + ": " + e.what());
  }
  restore(j);
}

}  // namespace camerapose::train
