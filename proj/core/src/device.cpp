#include "hetcomm/device.hpp"

#include <algorithm>
#include <chrono>
#include <thread>
#include <vector>

namespace hetcomm {

namespace {

void sleep_seconds(double seconds) {
  if (seconds <= 0.0) return;
  std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
}

}  // namespace

void DeviceDescriptor::validate() const {
  if (speed_factor <= 0.0) {
    throw InputError("device " + std::to_string(rank) +
                     ": speed_factor must be positive");
  }
  if (copy_latency < 0.0) {
    throw InputError("device " + std::to_string(rank) +
                     ": copy_latency must be nonnegative");
  }
  if (copy_bandwidth <= 0.0) {
    throw InputError("device " + std::to_string(rank) +
                     ": copy_bandwidth must be positive");
  }
  if (seconds_per_sample <= 0.0) {
    throw InputError("device " + std::to_string(rank) +
                     ": seconds_per_sample must be positive");
  }
  if (kind.empty() || kind.size() > 255) {
    throw InputError("device " + std::to_string(rank) +
                     ": kind must be 1..255 bytes");
  }
}

void ScoreTable::validate() const {
  if (scores.empty()) {
    throw InputError("empty score table");
  }
  double max_score = 0.0;
  for (const auto& [rank, score] : scores) {
    if (score <= 0.0 || score > 1.0) {
      throw InputError("score for rank " + std::to_string(rank) +
                       " outside (0, 1]");
    }
    max_score = std::max(max_score, score);
  }
  if (max_score != 1.0) {
    throw InputError("no device holds score 1.0");
  }
}

double simulate_compute(const DeviceDescriptor& d, std::int64_t n_samples) {
  if (n_samples < 0) {
    throw InputError("negative sample count");
  }
  double modeled =
      static_cast<double>(n_samples) * d.seconds_per_sample / d.speed_factor;
  sleep_seconds(modeled);
  return modeled;
}

double simulate_host_copy(const DeviceDescriptor& d, std::int64_t n_bytes) {
  if (n_bytes < 0) {
    throw InputError("negative byte count");
  }
  double modeled =
      d.copy_latency + static_cast<double>(n_bytes) / d.copy_bandwidth;
  sleep_seconds(modeled);
  return modeled;
}

double benchmark_device(const DeviceDescriptor& d, int probe_batch,
                        int probe_steps, const ProbeStep& work) {
  if (probe_batch < 1 || probe_steps < 1) {
    throw InputError("probe_batch and probe_steps must be >= 1");
  }
  std::vector<double> times;
  times.reserve(static_cast<std::size_t>(probe_steps));
  for (int step = 0; step < probe_steps; ++step) {
    auto start = std::chrono::steady_clock::now();
    work(d, probe_batch);
    std::chrono::duration<double> elapsed =
        std::chrono::steady_clock::now() - start;
    times.push_back(elapsed.count());
  }
  std::sort(times.begin(), times.end());
  std::size_t n = times.size();
  if (n % 2 == 1) {
    return times[n / 2];
  }
  return 0.5 * (times[n / 2 - 1] + times[n / 2]);
}

ScoreTable compute_scores(const std::map<int, double>& step_times) {
  if (step_times.empty()) {
    throw InputError("compute_scores: empty time table");
  }
  double fastest = 0.0;
  bool first = true;
  for (const auto& [rank, time] : step_times) {
    if (time <= 0.0) {
      throw InputError("compute_scores: non-positive time for rank " +
                       std::to_string(rank));
    }
    if (first || time < fastest) {
      fastest = time;
      first = false;
    }
  }
  ScoreTable table;
  for (const auto& [rank, time] : step_times) {
    table.scores[rank] = fastest / time;
  }
  return table;
}

}  // namespace hetcomm
