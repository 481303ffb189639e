#include "camerapose/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "camerapose/data.hpp"
#include "camerapose/error.hpp"
#include "camerapose/eval.hpp"
#include "camerapose/losses.hpp"
#include "camerapose/nets.hpp"
#include "camerapose/train.hpp"

namespace camerapose::cli {

namespace fs = std::filesystem;

namespace {

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ConfigError, path + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
}

// Echoes the effective configuration and lists every output file.
class OutputDir {
 public:
  OutputDir(fs::path dir, std::string command) : dir_(std::move(dir)), command_(std::move(command)) {
    ensure_dir(dir_);
  }

  fs::path path(const std::string& name) {
    files_.push_back(name);
    return dir_ / name;
  }

  void echo_config(const nlohmann::json& config, std::ostream& out) {
    config_ = config;
    write_text(path("config.json"), config.dump(2) + "\n");
    out << "effective config:\n" << config.dump(2) << "\n";
  }

  // Run metadata that is not part of the re-runnable configuration.
  void set_meta(nlohmann::json meta) { meta_ = std::move(meta); }

  void write_manifest() {
    nlohmann::json files = nlohmann::json::array();
    for (const auto& name : files_) {
      std::error_code ec;
      const auto size = fs::file_size(dir_ / name, ec);
      files.push_back({{"path", name}, {"bytes", ec ? 0 : size}});
    }
    nlohmann::json manifest = {{"command", command_}, {"config", config_}, {"files", files}};
    if (!meta_.is_null()) manifest["run"] = meta_;
    write_text(dir_ / "manifest.json", manifest.dump(2) + "\n");
  }

 private:
  fs::path dir_;
  std::string command_;
  nlohmann::json config_;
  nlohmann::json meta_;
  std::vector<std::string> files_;
};

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::IoError:
    case ErrorCode::ParseError: return kIoError;
    case ErrorCode::NumericAbort: return kNumericAbort;
    default: return kConfigError;
  }
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  std::optional<int> n;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::optional<double> weak_fraction;
  bool ood_weak = true;
  bool ood_given = false;
  std::optional<int> n_val;
  std::optional<int> n_test_ood;
  double noise_sigma = -1;
  std::string config;
  std::string out = "out";
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  // The echoed config is a valid --config: split counts live next to the
  // generator keys.
  data::SynthConfig cfg;
  int n_val = 0;
  int n_test_ood = 0;
  if (!a.config.empty()) {
    nlohmann::json j = read_json_file(a.config);
    if (!j.is_object()) throw Error(ErrorCode::ConfigError, a.config + ": config must be an object");
    for (auto [key, slot] : {std::pair<const char*, int*>{"n_val", &n_val}, {"n_test_ood", &n_test_ood}}) {
      if (!j.contains(key)) continue;
      if (!j[key].is_number_integer()) throw Error(ErrorCode::ConfigError, std::string(key) + " must be an integer");
      *slot = j[key].get<int>();
      j.erase(key);
    }
    cfg = data::SynthConfig::from_json(j);
  } else {
    const int n = a.n.value_or(1000);
    cfg.n_weak = n / 2;
    cfg.n_paired = n - cfg.n_weak;
  }
  if (a.seed_given) {
    cfg.seed = a.seed;
    cfg.seed_set = true;
  }
  if (a.n || a.weak_fraction) {
    const int n = a.n.value_or(cfg.n_paired + cfg.n_weak);
    const double fraction = a.weak_fraction.value_or(0.5);
    if (n < 0) throw Error(ErrorCode::ConfigError, "--n must be >= 0");
    if (!(fraction >= 0 && fraction <= 1)) throw Error(ErrorCode::ConfigError, "--weak-fraction must be in [0, 1]");
    cfg.n_weak = static_cast<int>(std::lround(n * fraction));
    cfg.n_paired = n - cfg.n_weak;
  }
  if (a.ood_given) cfg.weak_ood = a.ood_weak;
  if (a.noise_sigma >= 0) cfg.noise_sigma = a.noise_sigma;
  if (a.n_val) n_val = *a.n_val;
  if (a.n_test_ood) n_test_ood = *a.n_test_ood;
  if (n_val < 0 || n_test_ood < 0) throw Error(ErrorCode::ConfigError, "split sizes must be >= 0");
  cfg.validate();

  OutputDir dir(a.out, "synth");
  nlohmann::json echo = cfg.to_json();
  echo["n_val"] = n_val;
  echo["n_test_ood"] = n_test_ood;
  dir.echo_config(echo, out);

  const data::SynthResult result = data::generate_synthetic(cfg);
  data::write_dataset(result.paired, dir.path("paired.jsonl").string());
  data::write_dataset(result.weak, dir.path("weak.jsonl").string());

  // Held-out splits come from independent streams of the same seed.
  auto split = [&](int count, bool ood, const std::string& prefix, const std::string& file) {
    if (count <= 0) return;
    data::SynthConfig c = cfg;
    c.n_paired = count;
    c.n_weak = 0;
    c.paired_ood = ood;
    c.seed = cfg.seed ^ (ood ? 0x7e57ULL : 0x5a1ULL);
    c.id_prefix = cfg.id_prefix + prefix;
    data::write_dataset(data::generate_synthetic(c).paired, dir.path(file).string());
  };
  split(n_val, false, "val-", "val.jsonl");
  split(n_test_ood, true, "ood-", "test_ood.jsonl");
  dir.write_manifest();

  out << "paired: " << result.paired.size() << "  weak: " << result.weak.size()
      << "  val: " << n_val << "  test_ood: " << n_test_ood << "\n";
  return kOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config;
  std::string paired;
  std::string weak;
  std::string val;
  std::string stage = "all";
  std::string resume;
  std::string out = "out";
  std::uint64_t seed = 0;
  bool seed_given = false;
  int weak_ratio = -1;
};

std::vector<int> parse_stages(const std::string& s) {
  if (s == "all") return {1, 2, 3};
  if (s == "1" || s == "2" || s == "3") return {std::stoi(s)};
  throw Error(ErrorCode::ConfigError, "--stage must be all, 1, 2 or 3");
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  train::TrainConfig cfg;
  if (!a.config.empty()) cfg = train::TrainConfig::from_json(read_json_file(a.config));
  if (a.seed_given) cfg.seed = a.seed;
  if (a.weak_ratio >= 0) cfg.weak_ratio = a.weak_ratio;
  cfg.validate();
  const std::vector<int> stages = parse_stages(a.stage);

  train::TrainData td;
  td.paired = data::to_samples(data::read_dataset(a.paired));
  if (!a.weak.empty()) td.weak = data::to_samples(data::read_dataset(a.weak));
  if (!a.val.empty()) td.val = data::to_samples(data::read_dataset(a.val));

  OutputDir dir(a.out, "train");
  train::Trainer trainer(cfg, td);
  if (!a.resume.empty()) {
    trainer.load_checkpoint(a.resume);
    // The stored configuration wins except for explicit overrides.
    train::TrainConfig resumed = trainer.config();
    if (!a.config.empty()) {
      resumed = cfg;
      resumed.nets = trainer.config().nets;
    }
    if (a.weak_ratio >= 0) resumed.weak_ratio = a.weak_ratio;
    if (a.seed_given) err << "note: --seed is ignored when resuming\n";
    trainer.reconfigure(resumed);
  }
  dir.echo_config(trainer.config().to_json(), out);
  dir.set_meta({{"stages", stages}, {"resume", a.resume}, {"paired", a.paired}, {"weak", a.weak}, {"val", a.val}});

  std::ofstream log(dir.path("train_log.jsonl"), std::ios::app);
  if (!log) throw Error(ErrorCode::IoError, "cannot open training log");
  trainer.set_log(&log);
  trainer.set_checkpoint_path(dir.path("train_state.ckpt").string());

  for (int stage : stages) {
    if (trainer.state().stage > stage) continue;
    trainer.run_stage(stage);
    if (stage == 1) {
      write_text(dir.path("refine_stage1.json"), trainer.model().refine.params().to_json().dump() + "\n");
    } else {
      nets::save_model(trainer.model(), dir.path("model_stage" + std::to_string(stage) + ".json").string());
    }
    out << "stage " << stage << " done: " << trainer.state().step << " steps";
    if (!trainer.state().metric_window.empty()) {
      out << ", last val metric " << trainer.state().metric_window.back();
    }
    out << "\n";
  }
  if (stages.back() == 3) nets::save_model(trainer.model(), dir.path("model.json").string());
  log.close();
  dir.write_manifest();
  return kOk;
}

// ---------------------------------------------------------------- eval / project

nets::Model load_any_model(const std::string& path) {
  if (path.size() >= 5 && path.substr(path.size() - 5) == ".ckpt") {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
      return nets::Model::from_json(nlohmann::json::from_cbor(bytes).at("model"));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ParseError, path + ": " + e.what());
    }
  }
  return nets::load_model(path);
}

struct EvalArgs {
  std::string model;
  std::string data;
  bool use_refine = false;
  double corrupt_sigma = 0.0;
  std::uint64_t seed = 0;
  std::string out = "out";
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (!(a.corrupt_sigma >= 0)) throw Error(ErrorCode::ConfigError, "--corrupt-sigma must be >= 0");
  const auto records = data::read_dataset(a.data);
  for (const auto& r : records) {
    if (!r.paired()) {
      throw Error(ErrorCode::InvariantViolation, "eval requires paired data; record '" + r.id + "' has no 3D");
    }
  }
  const nets::Model model = load_any_model(a.model);
  eval::EvalOptions opts;
  opts.use_refine = a.use_refine;
  opts.corrupt_sigma = a.corrupt_sigma;
  opts.seed = a.seed;
  opts.dataset_tag = fs::path(a.data).filename().string();
  opts.model_id = fs::path(a.model).filename().string();

  OutputDir dir(a.out, "eval");
  dir.echo_config({{"model", a.model},
                   {"data", a.data},
                   {"use_refine", a.use_refine},
                   {"corrupt_sigma", a.corrupt_sigma},
                   {"seed", a.seed}},
                  out);
  const eval::EvalReport report = eval::evaluate(model, data::to_samples(records), opts);
  write_text(dir.path("eval_report.json"), report.to_json().dump(2) + "\n");
  dir.write_manifest();

  out << std::fixed << std::setprecision(2);
  out << "joint            MPJPE (mm)\n";
  for (int j = 1; j < kNumJoints; ++j) {
    out << std::left << std::setw(16) << joint_name(static_cast<JointId>(j)) << " "
        << std::right << std::setw(10) << report.per_joint_mpjpe[static_cast<size_t>(j)] << "\n";
  }
  out << "samples " << report.sample_ids.size() << "  MPJPE " << report.mpjpe_mm << " mm  PA-MPJPE "
      << report.pa_mpjpe_mm << " mm\n";
  return kOk;
}

struct ProjectArgs {
  std::string model;
  std::string data;
  std::string out = "out";
  int plots = 0;
};

std::string svg_skeleton(const Pose2D& input, const Pose2D& reprojected, double w, double h) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
     << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  auto draw = [&](const Pose2D& p, const char* colour, const char* dash) {
    for (const auto& b : KinematicTree::canonical().bones()) {
      os << "<line x1=\"" << p(b.parent, 0) << "\" y1=\"" << p(b.parent, 1) << "\" x2=\"" << p(b.child, 0)
         << "\" y2=\"" << p(b.child, 1) << "\" stroke=\"" << colour << "\" stroke-width=\"3\"" << dash << "/>\n";
    }
  };
  draw(input, "#1f77b4", "");
  draw(reprojected, "#d62728", " stroke-dasharray=\"6 4\"");
  os << "</svg>\n";
  return os.str();
}

int cmd_project(const ProjectArgs& a, std::ostream& out) {
  if (a.plots < 0) throw Error(ErrorCode::ConfigError, "--plots must be >= 0");
  const auto records = data::read_dataset(a.data);
  if (records.empty()) throw Error(ErrorCode::EmptyDataset, "no records in " + a.data);
  const nets::Model model = load_any_model(a.model);
  std::vector<data::Sample> samples = data::to_samples(records);

  OutputDir dir(a.out, "project");
  dir.echo_config({{"model", a.model}, {"data", a.data}, {"plots", a.plots}}, out);

  eval::EvalOptions opts;
  opts.use_refine = true;
  const eval::Predictions p = eval::predict(model, samples, opts);

  // Each dump line is itself a dataset record: predicted 3D and camera in
  // the record slots, the remaining columns as extra fields.
  std::vector<data::SampleRecord> dump;
  double total_error = 0;
  for (size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    const auto row = p.camera.row(static_cast<Eigen::Index>(i));
    const CameraIntrinsics k_norm{row(nets::kFx), row(nets::kFy), row(nets::kCx), row(nets::kCy)};
    const Offset3D t{row(nets::kTx), row(nets::kTy), row(nets::kTz)};
    const ag::Matrix reproj_row =
        losses::reproject(ag::Var::constant(flatten_pose(p.pose3d[i])), ag::Var::constant(row), losses::DepthPolicy::Clamp)
            .value();
    const Pose2D reproj = pose2d_from_row(reproj_row.row(0));
    const double error = eval::mean_2d_error(reproj, samples[i].x);
    total_error += error;

    const CameraIntrinsics k_px = data::denormalize_intrinsics(k_norm, rec.width, rec.height);
    data::SampleRecord d;
    d.id = rec.id;
    d.joints2d_px = rec.joints2d_px;
    d.conf = rec.conf;
    d.width = rec.width;
    d.height = rec.height;
    d.joints3d_mm = p.pose3d[i];
    d.camera = data::CameraRecord{k_px.fx, k_px.fy, k_px.cx, k_px.cy, t.tx, t.ty, t.tz};
    d.source_tag = "projection-dump";
    auto px = [&](const Pose2D& n) {
      const Pose2D q = denormalize_2d(n, rec.width, rec.height);
      nlohmann::json j = nlohmann::json::array();
      for (int r = 0; r < kNumJoints; ++r) j.push_back({q(r, 0), q(r, 1)});
      return j;
    };
    d.extra["refined2d_px"] = px(p.refined2d[i]);
    d.extra["reprojected2d_px"] = px(reproj);
    d.extra["reprojection_error"] = error;
    dump.push_back(std::move(d));

    if (static_cast<int>(i) < a.plots) {
      write_text(dir.path("plot_" + std::to_string(i) + ".svg"),
                 svg_skeleton(rec.joints2d_px, denormalize_2d(reproj, rec.width, rec.height), rec.width,
                              rec.height));
    }
  }
  data::write_dataset(dump, dir.path("projection.jsonl").string());
  dir.write_manifest();
  out << "samples " << records.size() << "  mean reprojection error "
      << total_error / static_cast<double>(records.size()) << " (normalized units)\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"camerapose: weakly-supervised monocular 3D pose lifting"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all help");
  int threads = 1;
  int verbosity = 0;
  app.add_option("--threads", threads, "Worker threads (only 1 is supported, for reproducibility)")
      ->check(CLI::Range(1, 1));
  app.add_flag("-v,--verbose", verbosity, "More output");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate synthetic paired and weak datasets");
  synth->add_option("--n", sa.n, "Total samples (paired + weak)");
  synth->add_option("--seed", sa.seed, "Generator seed")->each([&](const std::string&) { sa.seed_given = true; });
  synth->add_option("--weak-fraction", sa.weak_fraction, "Fraction of samples written as weak records");
  auto* ood_flag = synth->add_flag("--ood-weak,!--no-ood-weak", sa.ood_weak, "Draw weak poses from the wide angle range");
  synth->add_option("--n-val", sa.n_val, "Held-out in-distribution paired samples");
  synth->add_option("--n-test-ood", sa.n_test_ood, "Held-out out-of-distribution paired samples");
  synth->add_option("--noise-sigma", sa.noise_sigma, "2D noise sigma (normalized units)");
  synth->add_option("--config", sa.config, "Synthetic config file (JSON)");
  synth->add_option("--out", sa.out, "Output directory");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Run the training schedule");
  train_cmd->add_option("--config", ta.config, "Training config file (JSON)");
  train_cmd->add_option("--paired", ta.paired, "Paired dataset")->required();
  train_cmd->add_option("--weak", ta.weak, "Weak (2D-only) dataset");
  train_cmd->add_option("--val", ta.val, "Held-out paired dataset for model selection");
  train_cmd->add_option("--stage", ta.stage, "all, 1, 2 or 3");
  train_cmd->add_option("--resume", ta.resume, "Checkpoint to continue from");
  train_cmd->add_option("--seed", ta.seed, "Seed override")->each([&](const std::string&) { ta.seed_given = true; });
  train_cmd->add_option("--weak-ratio", ta.weak_ratio, "Weak batches per schedule window (0 disables)");
  train_cmd->add_option("--out", ta.out, "Output directory");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a model on paired data");
  eval_cmd->add_option("--model", ea.model, "Model file (.json) or checkpoint (.ckpt)")->required();
  eval_cmd->add_option("--data", ea.data, "Paired dataset")->required();
  eval_cmd->add_flag("--use-refine", ea.use_refine, "Run RefineNet before lifting");
  eval_cmd->add_option("--corrupt-sigma", ea.corrupt_sigma, "Corrupt inputs with this sigma");
  eval_cmd->add_option("--seed", ea.seed, "Corruption seed");
  eval_cmd->add_option("--out", ea.out, "Output directory");

  ProjectArgs pa;
  auto* project_cmd = app.add_subcommand("project", "Dump predictions and reprojections");
  project_cmd->add_option("--model", pa.model, "Model file (.json) or checkpoint (.ckpt)")->required();
  project_cmd->add_option("--data", pa.data, "Dataset")->required();
  project_cmd->add_option("--plots", pa.plots, "Number of SVG skeleton plots to write");
  project_cmd->add_option("--out", pa.out, "Output directory");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();  // program name
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  }

  try {
    if (synth->parsed()) {
      sa.ood_given = ood_flag->count() > 0;
      return cmd_synth(sa, out);
    }
    if (train_cmd->parsed()) return cmd_train(ta, out, err);
    if (eval_cmd->parsed()) return cmd_eval(ea, out);
    if (project_cmd->parsed()) return cmd_project(pa, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kIoError;
  }
  return kConfigError;
}

}  // namespace camerapose::cli
