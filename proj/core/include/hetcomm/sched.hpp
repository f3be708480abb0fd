#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "hetcomm/device.hpp"

namespace hetcomm {

// Per-rank batch sizes for one global step; sizes sum exactly to
// global_batch and each size is within one unit of its real quota.
struct BatchAllocation {
  std::map<int, int> sizes;  // rank -> batch size (may be 0)
  int global_batch = 0;

  int size_of(int rank) const { return sizes.at(rank); }
};

// Largest-remainder apportionment of global_batch proportional to scores:
// floor every quota score_i / sum(scores) * B, then hand the leftover units
// one each to the largest fractional remainders (ties to the lower rank).
// Scores only need to be positive; scaling all of them leaves the result
// unchanged.
BatchAllocation allocate_batches(const ScoreTable& scores, int global_batch);

// One synchronous step's dataset slice, split per rank.
struct StepPartition {
  int step_index = 0;
  std::map<int, std::vector<std::int64_t>> indices;  // rank -> ordered indices
};

// Shuffles 0..dataset_len-1 with Fisher-Yates under SplitMix64 seeded with
// seed ^ epoch, cuts the permutation into floor(dataset_len / B) contiguous
// global batches (trailing remainder dropped), and assigns each batch to
// ranks in ascending order with lengths from `alloc`.
std::vector<StepPartition> partition_indices(const BatchAllocation& alloc,
                                             std::int64_t dataset_len,
                                             int epoch, std::uint64_t seed);

// T_i = sizes[i] * seconds_per_sample_i / speed_factor_i.
std::map<int, double> predicted_step_time(
    const BatchAllocation& alloc, const std::vector<DeviceDescriptor>& devices);

}  // namespace hetcomm
