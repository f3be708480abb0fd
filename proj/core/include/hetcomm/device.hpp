#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>

#include "hetcomm/errors.hpp"

namespace hetcomm {

// A simulated accelerator. speed_factor scales compute throughput
// (samples per unit time); copy_latency/copy_bandwidth price one
// device<->host staging transfer.
struct DeviceDescriptor {
  int rank = 0;
  std::string kind = "sim-gpu";
  double speed_factor = 1.0;
  double copy_latency = 50e-6;        // seconds per transfer
  double copy_bandwidth = 10e9;       // bytes per second
  double seconds_per_sample = 200e-6; // compute cost at speed_factor 1.0

  // Throws InputError when a field is out of range.
  void validate() const;
};

// Relative speeds, fastest device pinned at exactly 1.0.
struct ScoreTable {
  std::map<int, double> scores;  // rank -> score in (0, 1]

  // Throws InputError unless all scores are in (0, 1] and the maximum is
  // exactly 1.0.
  void validate() const;
};

// Blocks the calling worker for the modeled duration (sleep-based, subject
// to scheduler jitter) and returns the exact jitter-free modeled seconds:
// n_samples * seconds_per_sample / speed_factor.
double simulate_compute(const DeviceDescriptor& d, std::int64_t n_samples);

// Same contract for a device<->host staging transfer:
// copy_latency + n_bytes / copy_bandwidth.
double simulate_host_copy(const DeviceDescriptor& d, std::int64_t n_bytes);

// Runs `work(d, probe_batch)` probe_steps times and returns the median
// per-step wall-clock seconds. The closure is expected to perform one
// training step of probe_batch samples on the device.
using ProbeStep = std::function<void(const DeviceDescriptor&, int)>;
double benchmark_device(const DeviceDescriptor& d, int probe_batch,
                        int probe_steps, const ProbeStep& work);

// score_i = min(times) / times_i. All times must be positive.
ScoreTable compute_scores(const std::map<int, double>& step_times);

}  // namespace hetcomm
