#include "hetcomm/experiment.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

namespace hetcomm {
namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.scenario = "tiny";
  cfg.devices = {DeviceSpec{}, DeviceSpec{}};
  for (auto& d : cfg.devices) d.seconds_per_sample = 20e-6;
  cfg.global_batch = 64;
  cfg.epochs = 1;
  cfg.dataset_n = 128;
  cfg.dataset_d = 8;
  cfg.noise_sigma = 0.1;
  cfg.allocation = AllocationMode::kEqual;
  return cfg;
}

TEST(ConfigParser, ParsesEveryKey) {
  const std::string text = R"(
# experiment description
scenario = demo
global_batch = 128
epochs = 3
dataset_n = 1024
dataset_d = 16
noise_sigma = 0.25
dataset_seed = 11
master_seed = 99
lr = 0.01
momentum = 0.8
weight_decay = 1e-4
allocation = fixed:0.75,0.25
dispatch = kaitian
probe_batch = 16
probe_steps = 3
output = /tmp/report.json

[device]
kind = sim-gpu
speed_factor = 1.0
copy_latency = 40e-6
copy_bandwidth = 12e9
seconds_per_sample = 150e-6

[device]
kind = sim-mlu
speed_factor = 0.7
)";
  ExperimentConfig cfg = parse_config_text(text);
  EXPECT_EQ(cfg.scenario, "demo");
  EXPECT_EQ(cfg.global_batch, 128);
  EXPECT_EQ(cfg.epochs, 3);
  EXPECT_EQ(cfg.dataset_n, 1024);
  EXPECT_EQ(cfg.dataset_d, 16);
  EXPECT_DOUBLE_EQ(cfg.noise_sigma, 0.25);
  EXPECT_EQ(cfg.dataset_seed, 11u);
  EXPECT_EQ(cfg.master_seed, 99u);
  EXPECT_DOUBLE_EQ(cfg.lr, 0.01);
  EXPECT_DOUBLE_EQ(cfg.momentum, 0.8);
  EXPECT_DOUBLE_EQ(cfg.weight_decay, 1e-4);
  EXPECT_EQ(cfg.allocation, AllocationMode::kFixed);
  EXPECT_EQ(cfg.fixed_ratios, (std::vector<double>{0.75, 0.25}));
  EXPECT_EQ(cfg.dispatch, DispatchMode::kKaitian);
  EXPECT_EQ(cfg.probe_batch, 16);
  EXPECT_EQ(cfg.probe_steps, 3);
  EXPECT_EQ(cfg.output_path, "/tmp/report.json");
  ASSERT_EQ(cfg.devices.size(), 2u);
  EXPECT_EQ(cfg.devices[0].kind, "sim-gpu");
  EXPECT_DOUBLE_EQ(cfg.devices[0].copy_latency, 40e-6);
  EXPECT_DOUBLE_EQ(cfg.devices[0].seconds_per_sample, 150e-6);
  EXPECT_EQ(cfg.devices[1].kind, "sim-mlu");
  EXPECT_DOUBLE_EQ(cfg.devices[1].speed_factor, 0.7);
  EXPECT_DOUBLE_EQ(cfg.devices[1].copy_bandwidth, 10e9);  // default kept
  EXPECT_NO_THROW(cfg.validate());
}

TEST(ConfigParser, RejectsMalformedInput) {
  EXPECT_THROW(parse_config_text("garbage line\n"), ConfigError);
  EXPECT_THROW(parse_config_text("unknown_key = 1\n"), ConfigError);
  EXPECT_THROW(parse_config_text("[weird]\n"), ConfigError);
  EXPECT_THROW(parse_config_text("epochs = soon\n"), ConfigError);
  EXPECT_THROW(parse_config_text("allocation = sometimes\n"), ConfigError);
  EXPECT_THROW(parse_config_text("dispatch = magic\n"), ConfigError);
  EXPECT_THROW(parse_config_text("[device]\nvolume = 11\n"), ConfigError);
}

TEST(ConfigValidate, CatchesSemanticErrors) {
  ExperimentConfig cfg = tiny_config();
  cfg.devices.clear();
  EXPECT_THROW(cfg.validate(), ConfigError);

  cfg = tiny_config();
  cfg.dataset_n = 32;  // smaller than the global batch
  EXPECT_THROW(cfg.validate(), ConfigError);

  cfg = tiny_config();
  cfg.allocation = AllocationMode::kFixed;
  cfg.fixed_ratios = {0.9, 0.2};  // sums to 1.1
  EXPECT_THROW(cfg.validate(), ConfigError);

  cfg = tiny_config();
  cfg.fixed_ratios = {0.5, 0.5};  // ratios without fixed mode
  EXPECT_THROW(cfg.validate(), ConfigError);

  cfg = tiny_config();
  cfg.dispatch = DispatchMode::kDirectIntra;
  cfg.devices[1].kind = "sim-mlu";
  EXPECT_THROW(cfg.validate(), ConfigError);

  cfg = tiny_config();
  cfg.devices[0].speed_factor = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(RunExperiment, SymmetricAdaptiveWorldSplitsEvenly) {
  ExperimentConfig cfg = tiny_config();
  cfg.scenario = "homo-2fast";
  cfg.allocation = AllocationMode::kAdaptive;
  cfg.global_batch = 256;
  cfg.dataset_n = 512;
  cfg.devices[0].seconds_per_sample = 200e-6;
  cfg.devices[1].seconds_per_sample = 200e-6;
  cfg.probe_batch = 64;  // long probe steps drown out scheduler jitter
  cfg.probe_steps = 5;

  ExperimentReport report = run_experiment(cfg);
  ASSERT_EQ(report.ranks.size(), 2u);
  EXPECT_EQ(report.ranks[0].train.allocation.at(0), 128);
  EXPECT_EQ(report.ranks[0].train.allocation.at(1), 128);
  EXPECT_EQ(report.steps_per_epoch, 2);
  EXPECT_GT(report.wall_train_s, 0.0);
  EXPECT_GT(report.bench_wall_s, 0.0);
}

TEST(RunExperiment, FixedRatiosTranslateToSizes) {
  ExperimentConfig cfg = tiny_config();
  cfg.allocation = AllocationMode::kFixed;
  cfg.fixed_ratios = {0.75, 0.25};
  cfg.global_batch = 256;
  cfg.dataset_n = 256;

  ExperimentReport report = run_experiment(cfg);
  EXPECT_EQ(report.ranks[0].train.allocation.at(0), 192);
  EXPECT_EQ(report.ranks[0].train.allocation.at(1), 64);
  EXPECT_DOUBLE_EQ(report.scores.scores.at(0), 1.0);
  EXPECT_NEAR(report.scores.scores.at(1), 1.0 / 3.0, 1e-12);
}

TEST(RunExperiment, ModeledFieldsAreReproducible) {
  ExperimentConfig cfg = tiny_config();
  ExperimentReport a = run_experiment(cfg);
  ExperimentReport b = run_experiment(cfg);
  EXPECT_EQ(a.final_loss, b.final_loss);
  EXPECT_EQ(a.modeled_total_s, b.modeled_total_s);
  EXPECT_EQ(a.ranks[0].train.allocation, b.ranks[0].train.allocation);
  EXPECT_EQ(a.ranks[0].train.final_model.weights,
            b.ranks[0].train.final_model.weights);
}

TEST(RunExperiment, DirectIntraStaysOffTheRelay) {
  ExperimentConfig cfg = tiny_config();
  cfg.dispatch = DispatchMode::kDirectIntra;
  ExperimentReport report = run_experiment(cfg);
  for (const RankReport& rr : report.ranks) {
    EXPECT_EQ(rr.counters.host_copies, 0);
    EXPECT_EQ(rr.counters.inter_connections, 0);
  }
}

TEST(RunExperiment, WritesParseableJsonReport) {
  ExperimentConfig cfg = tiny_config();
  cfg.output_path = ::testing::TempDir() + "hetcomm_report_test.json";
  ExperimentReport report = run_experiment(cfg);

  std::ifstream in(cfg.output_path);
  ASSERT_TRUE(in.good());
  nlohmann::json j = nlohmann::json::parse(in);
  EXPECT_EQ(j.at("schema"), "hetcomm-experiment-v1");
  EXPECT_EQ(j.at("config").at("scenario"), "tiny");
  EXPECT_EQ(j.at("config").at("global_batch"), 64);
  EXPECT_EQ(j.at("ranks").size(), 2u);
  EXPECT_DOUBLE_EQ(j.at("final_loss").get<double>(), report.final_loss);
  EXPECT_EQ(j.at("allocation").at("0").get<int>() +
                j.at("allocation").at("1").get<int>(),
            64);
  std::remove(cfg.output_path.c_str());
}

TEST(CompareScenarios, IdenticalConfigsTieWithZeroLossDelta) {
  ExperimentConfig a = tiny_config();
  a.scenario = "first";
  ExperimentConfig b = tiny_config();
  b.scenario = "second";
  ComparisonReport report = compare_scenarios({a, b});
  ASSERT_EQ(report.comparisons.size(), 1u);
  const ScenarioComparison& cmp = report.comparisons[0];
  EXPECT_EQ(cmp.baseline, "first");
  EXPECT_EQ(cmp.candidate, "second");
  EXPECT_EQ(cmp.final_loss_delta, 0.0) << "same seed, same data, same loss";
  EXPECT_DOUBLE_EQ(cmp.modeled_speedup, 1.0);
  EXPECT_GT(cmp.wall_speedup, 0.4);
  EXPECT_LT(cmp.wall_speedup, 2.5);
}

TEST(CompareScenarios, RequiresSharedDatasetSeed) {
  ExperimentConfig a = tiny_config();
  ExperimentConfig b = tiny_config();
  b.dataset_seed = a.dataset_seed + 1;
  EXPECT_THROW(compare_scenarios({a, b}), ConfigError);
  EXPECT_THROW(compare_scenarios({a}), ConfigError);
}

TEST(CompareScenarios, WritesCombinedReport) {
  ExperimentConfig a = tiny_config();
  a.scenario = "base";
  ExperimentConfig b = tiny_config();
  b.scenario = "cand";
  std::string path = ::testing::TempDir() + "hetcomm_compare_test.json";
  compare_scenarios({a, b}, path);
  std::ifstream in(path);
  ASSERT_TRUE(in.good());
  nlohmann::json j = nlohmann::json::parse(in);
  EXPECT_EQ(j.at("schema"), "hetcomm-compare-v1");
  EXPECT_EQ(j.at("runs").size(), 2u);
  EXPECT_EQ(j.at("comparisons").size(), 1u);
  std::remove(path.c_str());
}

TEST(Selftest, FreshBuildPasses) {
  std::ostringstream out;
  EXPECT_EQ(selftest(out), 0) << out.str();
  EXPECT_NE(out.str().find("all checks passed"), std::string::npos);
}

TEST(Selftest, InjectedWireFaultIsCaught) {
  std::ostringstream out;
  EXPECT_GE(selftest(out, /*inject_wire_fault=*/true), 1);
  EXPECT_NE(out.str().find("FAIL"), std::string::npos) << out.str();
}

}  // namespace
}  // namespace hetcomm
