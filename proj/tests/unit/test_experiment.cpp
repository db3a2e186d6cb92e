#include "adadiff/error.hpp"
#include "adadiff/experiment.hpp"
#include "fixtures.hpp"

#include <doctest.h>

#include <fstream>

using namespace adadiff;

namespace {

ExperimentConfig small_experiment(const std::filesystem::path& root) {
  ExperimentConfig cfg;
  cfg.data.subjects = 4;
  cfg.data.contrasts = {"T1", "T2"};
  cfg.data.imageSize = 32;
  cfg.data.slicesPerSubject = 1;
  cfg.data.dir = (root / "data").string();
  cfg.mapper = testing::tiny_config();
  cfg.mapper.imageSize = 32;
  cfg.train.maxSlices = 4;
  cfg.train.validationSlices = 2;
  cfg.recon.iterations = 2;
  cfg.eval.maxSlices = 2;
  cfg.outputDir = (root / "out").string();
  return cfg;
}

size_t count_files(const std::filesystem::path& dir, const std::string& ext) {
  size_t n = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    n += e.path().extension() == ext;
  }
  return n;
}

} // namespace

TEST_CASE("empty document yields the defaults") {
  const auto cfg = ExperimentConfig::fromJson(json::object());
  CHECK(cfg.data.subjects == 10);
  CHECK(cfg.schedule.totalSteps == 1000);
  CHECK(cfg.schedule.stride == 125);
  CHECK(cfg.op.accel == 4.0);
  CHECK(cfg.makeSchedule().steps() == 8);
  CHECK(ExperimentConfig::fromJson(cfg.toJson()).toJson() == cfg.toJson());
}

TEST_CASE("unknown keys are rejected at every level") {
  CHECK_THROWS_AS(ExperimentConfig::fromJson(json{{"extra", 1}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::fromJson(json{{"data", {{"subject", 3}}}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::fromJson(json{{"operator", {{"R", 4}}}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::fromJson(json{{"data", {{"subjects", "many"}}}}), ConfigError);
}

TEST_CASE("dotted overrides parse JSON values and fall back to strings") {
  json doc = json::object();
  apply_override(doc, "operator.accel=8");
  apply_override(doc, "operator.maskKind=vd1d");
  apply_override(doc, "data.contrasts=[\"T1\"]");
  const auto cfg = ExperimentConfig::fromJson(doc);
  CHECK(cfg.op.accel == 8.0);
  CHECK(cfg.op.maskKind == "vd1d");
  CHECK(cfg.data.contrasts == std::vector<std::string>{"T1"});
  CHECK_THROWS_AS(apply_override(doc, "novalue"), ConfigError);
  CHECK_THROWS_AS(apply_override(doc, "operator.accel.x=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(doc, "a..b=1"), ConfigError);
}

TEST_CASE("config files load and take overrides on top") {
  const auto dir = testing::scratch_dir("config");
  std::ofstream(dir / "c.json") << R"({"recon": {"iterations": 50}, "eval": {"workers": 2}})";
  const auto cfg = ExperimentConfig::fromJson(load_config_document(dir / "c.json", {"recon.iterations=7"}));
  CHECK(cfg.recon.iterations == 7);
  CHECK(cfg.eval.workers == 2);
  std::ofstream(dir / "bad.json") << "{";
  CHECK_THROWS_AS(load_config_document(dir / "bad.json", {}), ConfigError);
  CHECK_THROWS_AS(load_config_document(dir / "missing.json", {}), ConfigError);
}

TEST_CASE("default dataset has 120 slices") {
  const auto root = testing::scratch_dir("default-data");
  ExperimentConfig cfg;
  cfg.data.imageSize = 32;
  cfg.data.dir = (root / "data").string();
  CHECK(run_gen_data(cfg).sliceCount() == 120);
  CHECK(std::filesystem::exists(root / "data" / "config.json"));
}

TEST_CASE("operator settings follow the config") {
  OperatorConfig op;
  op.accel = 8.0;
  CHECK(make_slice_operator(op, 32, 5).mask().sampledCount() == 32 * 32 / 8);
  op.accel = 4.0;
  op.coils = 4;
  const auto four = make_slice_operator(op, 32, 5);
  CHECK(four.mask().sampledCount() == 32 * 32 / 4);
  CHECK(four.coilCount() == 4);
  CHECK(torch::equal(make_slice_operator(op, 32, 5).mask().pattern, four.mask().pattern));
}

TEST_CASE("train, reconstruct and eval pipeline") {
  const auto root = testing::scratch_dir("pipeline");
  auto cfg = small_experiment(root);
  run_gen_data(cfg);
  const auto ckpt = root / "out" / "prior.ckpt";
  const auto prior = run_train(cfg, PriorVariant::Adversarial, ckpt);
  CHECK(prior.meta.epochsCompleted == 1);
  CHECK(std::filesystem::exists(ckpt));
  CHECK(std::filesystem::exists(root / "out" / "training-adversarial.csv"));

  const auto dir = root / "out" / "recon";
  const auto outcomes = run_reconstruct(cfg, prior, ReconVariant::Full, dir);
  REQUIRE(outcomes.size() == 2);
  CHECK(outcomes[0].result.dcLossTrace.size() == 2);
  CHECK(count_files(dir, ".png") == 2 * 4);
  CHECK(count_files(dir, ".cfl") == 2 * 3);
  CHECK(std::filesystem::exists(dir / "config.json"));

  const auto noAdapt = run_reconstruct(cfg, prior, ReconVariant::NoAdapt, std::nullopt);
  CHECK(noAdapt[0].result.dcLossTrace.empty());
  CHECK(torch::equal(noAdapt[0].result.xInit, outcomes[0].result.xInit));

  const auto report = run_eval(dir, root / "data", false);
  CHECK(report.rows().size() == 2);
  CHECK(report.rows()[0].psnr == doctest::Approx(outcomes[0].psnrFin).epsilon(1e-9));
  write_report(report, root / "out" / "report");
  CHECK(std::filesystem::exists(root / "out" / "report" / "metrics.csv"));
  CHECK(std::filesystem::exists(root / "out" / "report" / "summary.csv"));
}

TEST_CASE("resumed training continues the loss trace") {
  const auto root = testing::scratch_dir("resume-cli");
  auto cfg = small_experiment(root);
  run_gen_data(cfg);
  const auto ckpt = root / "p.ckpt";
  run_train(cfg, PriorVariant::L1, ckpt);
  cfg.mapper.epochs = 2;
  const auto resumed = run_train(cfg, PriorVariant::L1, ckpt, ckpt);
  CHECK(resumed.meta.epochsCompleted == 2);
  CHECK(resumed.meta.trace.generatorLoss.size() == 2);
  const auto fresh = run_train(cfg, PriorVariant::L1, root / "q.ckpt");
  CHECK(fresh.meta.trace.generatorLoss == resumed.meta.trace.generatorLoss);
}

TEST_CASE("missing or corrupt data surfaces as data errors") {
  const auto root = testing::scratch_dir("corrupt");
  auto cfg = small_experiment(root);
  CHECK_THROWS_AS(run_train(cfg, PriorVariant::L1, root / "x.ckpt"), DataError);
  run_gen_data(cfg);
  std::ofstream(root / "data" / "manifest.json", std::ios::trunc) << R"({"format": "other"})";
  CHECK_THROWS_AS(run_train(cfg, PriorVariant::L1, root / "x.ckpt"), DataError);
}
