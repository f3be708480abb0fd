#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "hetcomm/device.hpp"
#include "hetcomm/group.hpp"
#include "hetcomm/rendezvous.hpp"
#include "hetcomm/sched.hpp"
#include "hetcomm/tensor.hpp"

namespace hetcomm {

// Least-squares model standing in for the real network: closed-form
// gradients make exact cross-checks possible.
struct LinearModel {
  Tensor weights;
  double bias = 0.0;
};

struct SyntheticDataset {
  std::int64_t n = 0;
  int d = 0;
  std::vector<double> features;  // row-major n x d
  std::vector<double> targets;
  std::uint64_t seed = 0;

  std::span<const double> row(std::int64_t i) const {
    return std::span<const double>(features).subspan(
        static_cast<std::size_t>(i) * static_cast<std::size_t>(d),
        static_cast<std::size_t>(d));
  }
};

// Deterministic in seed. Draw order (SplitMix64 + Box-Muller): hidden
// weights (d), hidden bias, then per sample d features followed by one
// noise value; targets = x . w* + b* + noise_sigma * noise.
SyntheticDataset generate_dataset(std::uint64_t seed, std::int64_t n, int d,
                                  double noise_sigma);

// Sums of per-sample squared-error gradients over the batch, left
// unnormalized so dividing the global sum by the global batch size
// reproduces the full-batch gradient exactly regardless of the split.
struct BatchGradient {
  Tensor grad_w;                 // sum of 2 (x.w + b - y) x
  double grad_b = 0.0;           // sum of 2 (x.w + b - y)
  double sq_residual_sum = 0.0;  // sum of (x.w + b - y)^2, for loss reporting
  std::int64_t count = 0;
};

BatchGradient local_gradient(const LinearModel& model,
                             const SyntheticDataset& ds,
                             std::span<const std::int64_t> batch);

struct TrainConfig {
  int global_batch = 256;
  int epochs = 5;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0;  // additive lambda * w on the averaged gradient
  std::uint64_t seed = 0;     // epoch shuffles + config digest
  int probe_batch = 32;       // benchmark phase
  int probe_steps = 5;
  // Single-kind worlds only: call the group collective directly instead of
  // going through the dispatch layer.
  bool direct_intra = false;
};

struct EpochStats {
  double wall_s = 0.0;
  double modeled_s = 0.0;
  double mean_loss = 0.0;
};

struct TrainReport {
  int rank = 0;
  std::map<int, int> allocation;  // rank -> batch size
  int steps_per_epoch = 0;
  std::vector<EpochStats> epochs;
  // Modeled per-rank accounting; compute + comm + idle == modeled_total_s.
  double compute_modeled_s = 0.0;
  double comm_modeled_s = 0.0;
  double idle_modeled_s = 0.0;
  double modeled_total_s = 0.0;
  double wall_train_s = 0.0;
  double final_loss = 0.0;
  LinearModel final_model;
};

// Benchmarks the local device with short training steps, publishes the
// median step time under "bench/<rank>" (8-byte LE float), waits at the
// "bench" barrier, then reads every rank's time and computes the shared
// score table. Every rank returns identical scores.
ScoreTable run_benchmark_phase(RendezvousClient& rdv,
                               const CollectiveContext& ctx,
                               const SyntheticDataset& ds,
                               const TrainConfig& cfg);

// Synchronous data-parallel training. All ranks must call with identical
// config, dataset, and scores (checked through a config-digest broadcast).
// Parameters stay bitwise identical across ranks after every step.
TrainReport train(const TrainConfig& cfg, CollectiveContext& ctx,
                  const std::vector<DeviceDescriptor>& devices,
                  const SyntheticDataset& ds, const ScoreTable& scores);

}  // namespace hetcomm
