#include "hetcomm/sched.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hetcomm/rng.hpp"

namespace hetcomm {

BatchAllocation allocate_batches(const ScoreTable& scores, int global_batch) {
  if (global_batch < 1) {
    throw InputError("allocate_batches: global_batch must be >= 1");
  }
  if (scores.scores.empty()) {
    throw InputError("allocate_batches: empty score table");
  }
  double total = 0.0;
  for (const auto& [rank, score] : scores.scores) {
    if (score <= 0.0) {
      throw InputError("allocate_batches: non-positive score for rank " +
                       std::to_string(rank));
    }
    total += score;
  }

  BatchAllocation alloc;
  alloc.global_batch = global_batch;
  int assigned = 0;
  std::vector<std::pair<double, int>> remainders;  // (-fraction, rank)
  for (const auto& [rank, score] : scores.scores) {
    double quota = score / total * static_cast<double>(global_batch);
    int base = static_cast<int>(std::floor(quota));
    alloc.sizes[rank] = base;
    assigned += base;
    remainders.emplace_back(-(quota - static_cast<double>(base)), rank);
  }
  // Leftover units go to the largest fractional parts, lower rank first on
  // ties. The pair already sorts that way (fraction negated).
  std::sort(remainders.begin(), remainders.end());
  int leftover = global_batch - assigned;
  for (int i = 0; i < leftover; ++i) {
    alloc.sizes[remainders[static_cast<std::size_t>(i)].second] += 1;
  }
  return alloc;
}

std::vector<StepPartition> partition_indices(const BatchAllocation& alloc,
                                             std::int64_t dataset_len,
                                             int epoch, std::uint64_t seed) {
  const std::int64_t batch = alloc.global_batch;
  if (dataset_len < batch) {
    throw InputError("partition_indices: dataset_len " +
                     std::to_string(dataset_len) +
                     " smaller than global batch " + std::to_string(batch));
  }
  std::vector<std::int64_t> perm(static_cast<std::size_t>(dataset_len));
  std::iota(perm.begin(), perm.end(), 0);
  SplitMix64 rng(seed ^ static_cast<std::uint64_t>(epoch));
  fisher_yates_shuffle(perm, rng);

  const std::int64_t steps = dataset_len / batch;  // trailing remainder dropped
  std::vector<StepPartition> parts;
  parts.reserve(static_cast<std::size_t>(steps));
  for (std::int64_t s = 0; s < steps; ++s) {
    StepPartition part;
    part.step_index = static_cast<int>(s);
    std::int64_t cursor = s * batch;
    for (const auto& [rank, size] : alloc.sizes) {
      auto begin = perm.begin() + cursor;
      part.indices[rank].assign(begin, begin + size);
      cursor += size;
    }
    parts.push_back(std::move(part));
  }
  return parts;
}

std::map<int, double> predicted_step_time(
    const BatchAllocation& alloc,
    const std::vector<DeviceDescriptor>& devices) {
  std::map<int, double> times;
  for (const DeviceDescriptor& d : devices) {
    auto it = alloc.sizes.find(d.rank);
    if (it == alloc.sizes.end()) {
      throw InputError("predicted_step_time: no allocation for rank " +
                       std::to_string(d.rank));
    }
    times[d.rank] =
        static_cast<double>(it->second) * d.seconds_per_sample / d.speed_factor;
  }
  if (times.size() != alloc.sizes.size()) {
    throw InputError("predicted_step_time: device list does not cover the allocation");
  }
  return times;
}

}  // namespace hetcomm
