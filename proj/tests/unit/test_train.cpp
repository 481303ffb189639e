#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "camerapose/error.hpp"
#include "camerapose/eval.hpp"
#include "camerapose/train.hpp"
#include "support/fixtures.hpp"

using namespace camerapose;

namespace {

train::TrainConfig small_config(std::uint64_t seed = 1) {
  train::TrainConfig c;
  c.stage1 = {2, 1e-3, {}};
  c.stage2 = {2, 1e-3, {}};
  c.stage3 = {2, 5e-4, {1}};
  c.nets.refine_width = c.nets.lifter_width = c.nets.camera_width = 16;
  c.nets.generator_width = c.nets.discriminator_width = 8;
  c.batch_size = 16;
  c.seed = seed;
  return c;
}

train::TrainData small_data(std::uint64_t seed = 2) {
  const auto r = testing::synth(48, 32, seed, 0.005);
  train::TrainData d;
  d.paired = data::to_samples(r.paired);
  d.weak = data::to_samples(r.weak);
  d.val = testing::paired_samples(16, seed + 100);
  return d;
}

std::string log_of(const train::Trainer& t) {
  std::ostringstream os;
  for (const auto& r : t.records()) os << r.to_json().dump() << "\n";
  return os.str();
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("stage schedules") {
  const train::StageSchedule s{75, 5e-4, {30, 60}};
  CHECK(s.lr_at(0) == doctest::Approx(5e-4));
  CHECK(s.lr_at(29) == doctest::Approx(5e-4));
  CHECK(s.lr_at(30) == doctest::Approx(5e-5));
  CHECK(s.lr_at(74) == doctest::Approx(5e-6));
  CHECK_NOTHROW(s.validate("s"));
  CHECK_THROWS_AS((train::StageSchedule{10, 1e-4, {10}}.validate("s")), Error);
  CHECK_THROWS_AS((train::StageSchedule{0, 1e-4, {}}.validate("s")), Error);
  CHECK_THROWS_AS((train::StageSchedule{5, 0.0, {}}.validate("s")), Error);
}

TEST_CASE("config defaults, json round-trip and unknown keys") {
  const train::TrainConfig d;
  CHECK(d.stage1.epochs == 100);
  CHECK(d.stage1.lr == 1e-4);
  CHECK(d.stage1.decay_epochs == std::vector<int>{30, 60, 90});
  CHECK(d.stage2.epochs == 10);
  CHECK(d.stage3.epochs == 75);
  CHECK(d.stage3.lr == 5e-4);
  CHECK(d.stage3.decay_epochs == std::vector<int>{30, 60});
  const auto j = d.to_json();
  CHECK(j["weights"]["lambda_cam"] == 0.01);
  CHECK(train::TrainConfig::from_json(j).to_json() == j);
  try {
    train::TrainConfig::from_json({{"learning_rate", 1}});
    FAIL("expected ConfigError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ConfigError);
  }
}

TEST_CASE("sub-steps run in GAN, paired, weak order") {
  train::Trainer t(small_config(), small_data());
  t.run_stage(1);
  t.run_stage(2);
  std::vector<std::string> seq;
  t.set_step_hook([&](const train::StepRecord& r) {
    if (r.substep != "epoch") seq.push_back(r.substep);
  });
  t.run_stage(3, 1);
  REQUIRE(seq.size() >= 4);
  for (size_t i = 0; i + 3 < seq.size(); i += 4) {
    CHECK(seq[i] == "disc");
    CHECK(seq[i + 1] == "gen");
    CHECK(seq[i + 2] == "paired");
    CHECK(seq[i + 3] == "weak");
  }
  CHECK(seq.size() % 4 == 0);
}

TEST_CASE("stage 2 consumes no weak data and improves the lifter") {
  auto data = small_data();
  train::Trainer t(small_config(), data);
  t.run_stage(1);
  const double before = eval::evaluate(t.model(), data.val, {.use_refine = false}).mpjpe_mm;
  auto cfg = small_config();
  cfg.stage2.epochs = 8;
  train::Trainer t2(cfg, data);
  t2.run_stage(1);
  t2.run_stage(2);
  CHECK(t2.state().weak_consumed == 0);
  for (const auto& r : t2.records()) CHECK(r.substep != "weak");
  const double after = eval::evaluate(t2.model(), data.val, {.use_refine = false}).mpjpe_mm;
  MESSAGE("val MPJPE " << before << " -> " << after);
  CHECK(after < before);
}

TEST_CASE("stage 1 reduces the refinement loss") {
  auto cfg = small_config();
  cfg.stage1 = {6, 1e-3, {}};
  train::Trainer t(cfg, small_data());
  t.run_stage(1);
  std::vector<double> per_epoch(6, 0.0);
  std::vector<int> counts(6, 0);
  for (const auto& r : t.records()) {
    if (r.substep != "refine") continue;
    per_epoch[static_cast<size_t>(r.epoch)] += *r.values.at("loss_ref");
    ++counts[static_cast<size_t>(r.epoch)];
  }
  CHECK(per_epoch[5] / counts[5] < per_epoch[0] / counts[0]);
}

TEST_CASE("weak ratio 0 reduces stage 3 to supervised plus GAN updates") {
  auto cfg = small_config();
  cfg.weak_ratio = 0;
  train::Trainer t(cfg, small_data());
  t.run({1, 2, 3});
  CHECK(t.state().weak_consumed == 0);
  for (const auto& r : t.records()) CHECK(r.substep != "weak");
}

TEST_CASE("paired:weak ratio shapes the stage 3 interleave") {
  auto cfg = small_config();
  cfg.paired_ratio = 1;
  cfg.weak_ratio = 2;
  train::Trainer t(cfg, small_data());
  t.run_stage(1);
  t.run_stage(2);
  t.run_stage(3, 1);
  long long paired = 0, weak = 0;
  for (const auto& r : t.records()) {
    if (r.stage != 3) continue;
    paired += r.substep == "paired";
    weak += r.substep == "weak";
  }
  CHECK(weak == 2 * paired);
  CHECK(t.state().weak_consumed > 0);
}

TEST_CASE("identical runs produce identical logs and models") {
  train::Trainer a(small_config(7), small_data());
  train::Trainer b(small_config(7), small_data());
  a.run({1, 2, 3});
  b.run({1, 2, 3});
  CHECK(log_of(a) == log_of(b));
  CHECK(a.model().to_json() == b.model().to_json());
  train::Trainer c(small_config(8), small_data());
  c.run({1, 2, 3});
  CHECK(log_of(a) != log_of(c));
}

TEST_CASE("resume from a mid-stage checkpoint is continuation-exact") {
  testing::TempDir dir("train");
  auto cfg = small_config(3);
  cfg.stage3 = {3, 5e-4, {2}};
  train::Trainer full(cfg, small_data());
  full.run({1, 2, 3});

  train::Trainer first(cfg, small_data());
  first.run({1, 2});
  first.run_stage(3, 1);
  first.save_checkpoint(dir.file("mid.ckpt"));

  train::Trainer second(small_config(99), small_data());
  second.load_checkpoint(dir.file("mid.ckpt"));
  CHECK(second.config().to_json() == cfg.to_json());
  CHECK(second.state().stage == 3);
  CHECK(second.state().epoch == 1);
  second.run_stage(3);

  CHECK(second.model().to_json() == full.model().to_json());
  std::ostringstream tail;
  for (const auto& r : full.records()) {
    if (r.stage == 3 && r.epoch >= 1) tail << r.to_json().dump() << "\n";
  }
  CHECK(log_of(second) == tail.str());
}

TEST_CASE("reconfigure keeps network shapes fixed") {
  train::Trainer t(small_config(), small_data());
  auto cfg = small_config();
  cfg.weak_ratio = 0;
  CHECK_NOTHROW(t.reconfigure(cfg));
  CHECK(t.config().weak_ratio == 0);
  cfg.nets.lifter_width = 32;
  CHECK_THROWS_AS(t.reconfigure(cfg), Error);
}

TEST_CASE("corrupt checkpoints are rejected") {
  testing::TempDir dir("train");
  {
    std::ofstream out(dir.file("bad.ckpt"), std::ios::binary);
    out << "not cbor";
  }
  train::Trainer t(small_config(), small_data());
  CHECK_THROWS_AS(t.load_checkpoint(dir.file("bad.ckpt")), Error);
  CHECK_THROWS_AS(t.load_checkpoint(dir.file("missing.ckpt")), Error);
}

TEST_CASE("non-finite values abort and name the last checkpoint") {
  testing::TempDir dir("train");
  train::Trainer clean(small_config(), small_data());
  clean.set_checkpoint_path(dir.file("state.ckpt"));
  clean.run_stage(1);

  auto data = small_data();
  for (auto& s : data.paired) s.x(3, 0) = std::numeric_limits<double>::quiet_NaN();
  train::Trainer t(small_config(), data);
  t.load_checkpoint(dir.file("state.ckpt"));
  t.set_checkpoint_path(dir.file("state.ckpt"));
  try {
    t.run_stage(2);
    FAIL("expected NumericAbort");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NumericAbort);
    CHECK(std::string(e.what()).find(dir.file("state.ckpt")) != std::string::npos);
  }
}

TEST_CASE("stage order is enforced") {
  train::Trainer t(small_config(), small_data());
  t.run_stage(2);
  CHECK_THROWS_AS(t.run_stage(1), Error);
}

}
