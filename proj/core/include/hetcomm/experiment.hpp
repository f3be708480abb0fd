#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "hetcomm/device.hpp"
#include "hetcomm/group.hpp"
#include "hetcomm/train.hpp"

namespace hetcomm {

// One simulated device of an experiment; ranks are assigned by list order.
struct DeviceSpec {
  std::string kind = "sim-gpu";
  double speed_factor = 1.0;
  double copy_latency = 50e-6;
  double copy_bandwidth = 10e9;
  double seconds_per_sample = 200e-6;
};

enum class AllocationMode { kAdaptive, kEqual, kFixed };
enum class DispatchMode { kKaitian, kDirectIntra };

const char* allocation_mode_name(AllocationMode m);
const char* dispatch_mode_name(DispatchMode m);

struct ExperimentConfig {
  std::string scenario = "unnamed";
  std::vector<DeviceSpec> devices;
  int global_batch = 256;
  int epochs = 5;
  std::int64_t dataset_n = 4096;
  int dataset_d = 32;
  double noise_sigma = 0.1;
  std::uint64_t dataset_seed = 7;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0;
  AllocationMode allocation = AllocationMode::kAdaptive;
  std::vector<double> fixed_ratios;  // kFixed only; must sum to 1
  DispatchMode dispatch = DispatchMode::kKaitian;
  std::string output_path;  // empty: no report file
  std::uint64_t master_seed = 42;
  int probe_batch = 32;
  int probe_steps = 5;

  // Throws ConfigError before any worker starts.
  void validate() const;

  DeviceDescriptor device_descriptor(int rank) const;
  std::vector<DeviceDescriptor> all_devices() const;
  TrainConfig train_config() const;
};

// Flat key = value text with '#' comments and one [device] section per
// device. Unknown keys are rejected.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config_file(const std::string& path);

struct RankReport {
  TrainReport train;
  DeviceDescriptor device;
  double score = 1.0;
  CostCounters counters;
  double bench_wall_s = 0.0;
};

struct ExperimentReport {
  ExperimentConfig config;  // resolved echo
  std::vector<RankReport> ranks;
  ScoreTable scores;
  int steps_per_epoch = 0;
  double final_loss = 0.0;
  double wall_train_s = 0.0;    // slowest rank's training wall time
  double modeled_total_s = 0.0; // identical on every rank
  double bench_wall_s = 0.0;
  double total_wall_s = 0.0;    // rendezvous + benchmark + training
};

// Starts a rendezvous service, runs one worker thread per device, executes
// the benchmark phase (unless the allocation mode overrides scores), trains,
// and writes the JSON report when config.output_path is set.
ExperimentReport run_experiment(const ExperimentConfig& config);

struct ScenarioComparison {
  std::string baseline;
  std::string candidate;
  double wall_speedup = 0.0;     // baseline wall / candidate wall
  double modeled_speedup = 0.0;  // baseline modeled / candidate modeled
  double final_loss_delta = 0.0; // candidate - baseline
  double overhead_pct = 0.0;     // (candidate - baseline) / baseline * 100
};

struct ComparisonReport {
  std::vector<ExperimentReport> runs;
  std::vector<ScenarioComparison> comparisons;  // every pair, earlier = baseline
};

// Runs each config sequentially; all configs must share the dataset seed so
// speedups and loss deltas are free of dataset variance.
ComparisonReport compare_scenarios(const std::vector<ExperimentConfig>& configs,
                                   const std::string& output_path = "");

std::string report_to_json(const ExperimentReport& report);
std::string report_to_json(const ComparisonReport& report);
void write_report_file(const std::string& path, const std::string& json);

// In-process invariant suite: wire roundtrips, allocation properties, and a
// four-rank collective cross-check. Prints one line per check; returns the
// number of failures. `inject_wire_fault` corrupts a frame on purpose so the
// wire check must fail (negative control).
int selftest(std::ostream& out, bool inject_wire_fault = false);

}  // namespace hetcomm
