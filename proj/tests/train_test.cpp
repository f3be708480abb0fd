#include "hetcomm/train.hpp"

#include <cmath>
#include <cstring>
#include <numeric>

#include <gtest/gtest.h>

#include "hetcomm/rng.hpp"
#include "world_util.hpp"

namespace hetcomm {
namespace {

using testing::make_devices;
using testing::run_world;

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.size() == b.size() &&
         (a.empty() ||
          std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

double rel_diff(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-30});
}

TEST(GenerateDataset, DeterministicInSeed) {
  SyntheticDataset a = generate_dataset(42, 128, 8, 0.1);
  SyntheticDataset b = generate_dataset(42, 128, 8, 0.1);
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.targets, b.targets);
  SyntheticDataset c = generate_dataset(43, 128, 8, 0.1);
  EXPECT_NE(a.features, c.features);
}

TEST(GenerateDataset, ZeroNoiseMakesTargetsExactlyAffine) {
  // With d = 1 all (x, y) points must be collinear.
  SyntheticDataset ds = generate_dataset(7, 16, 1, 0.0);
  double x0 = ds.features[0], y0 = ds.targets[0];
  double x1 = ds.features[1], y1 = ds.targets[1];
  double slope = (y1 - y0) / (x1 - x0);
  for (std::int64_t i = 2; i < ds.n; ++i) {
    double xi = ds.features[static_cast<std::size_t>(i)];
    double yi = ds.targets[static_cast<std::size_t>(i)];
    EXPECT_NEAR(yi, y0 + slope * (xi - x0), 1e-9 * (1.0 + std::abs(yi)));
  }
}

TEST(GenerateDataset, DefaultDeskScaleShape) {
  SyntheticDataset ds = generate_dataset(1, 4096, 32, 0.1);
  EXPECT_EQ(ds.n, 4096);
  EXPECT_EQ(ds.d, 32);
  EXPECT_EQ(ds.features.size(), 4096u * 32u);
  EXPECT_EQ(ds.targets.size(), 4096u);
}

TEST(GenerateDataset, RejectsBadShape) {
  EXPECT_THROW(generate_dataset(1, 0, 4, 0.1), InputError);
  EXPECT_THROW(generate_dataset(1, 4, 0, 0.1), InputError);
  EXPECT_THROW(generate_dataset(1, 4, 4, -0.5), InputError);
}

TEST(LocalGradient, HandDifferentiatedSingleSample) {
  SyntheticDataset ds;
  ds.n = 1;
  ds.d = 2;
  ds.features = {1.0, 0.0};
  ds.targets = {1.0};

  LinearModel model;
  model.weights = {0.0, 0.0};
  model.bias = 0.0;

  std::vector<std::int64_t> batch = {0};
  BatchGradient g = local_gradient(model, ds, batch);
  EXPECT_EQ(g.grad_w, (Tensor{-2.0, 0.0}));
  EXPECT_DOUBLE_EQ(g.grad_b, -2.0);
  EXPECT_DOUBLE_EQ(g.sq_residual_sum, 1.0);
  EXPECT_EQ(g.count, 1);
}

TEST(LocalGradient, ZeroResidualBatchHasZeroGradient) {
  SyntheticDataset ds;
  ds.n = 2;
  ds.d = 2;
  ds.features = {1.0, 2.0, -3.0, 0.5};
  LinearModel model;
  model.weights = {0.25, -1.5};
  model.bias = 0.75;
  ds.targets = {1.0 * 0.25 + 2.0 * -1.5 + 0.75, -3.0 * 0.25 + 0.5 * -1.5 + 0.75};

  std::vector<std::int64_t> batch = {0, 1};
  BatchGradient g = local_gradient(model, ds, batch);
  EXPECT_EQ(g.grad_w, (Tensor{0.0, 0.0}));
  EXPECT_DOUBLE_EQ(g.grad_b, 0.0);
  EXPECT_DOUBLE_EQ(g.sq_residual_sum, 0.0);
}

TEST(LocalGradient, EmptyBatchIsExactZero) {
  SyntheticDataset ds = generate_dataset(3, 8, 4, 0.1);
  LinearModel model;
  model.weights = {1.0, 2.0, 3.0, 4.0};
  model.bias = -1.0;
  BatchGradient g = local_gradient(model, ds, {});
  EXPECT_EQ(g.grad_w, Tensor(4, 0.0));
  EXPECT_EQ(g.grad_b, 0.0);
  EXPECT_EQ(g.count, 0);
}

TEST(LocalGradient, MatchesCentralDifferences) {
  SyntheticDataset ds = generate_dataset(11, 64, 8, 0.2);
  SplitMix64 rng(5);
  LinearModel model;
  model.weights.resize(8);
  for (double& w : model.weights) w = rng.next_gaussian();
  model.bias = rng.next_gaussian();

  std::vector<std::int64_t> batch(16);
  std::iota(batch.begin(), batch.end(), 4);

  auto loss_of = [&](const LinearModel& m) {
    return local_gradient(m, ds, batch).sq_residual_sum;
  };

  BatchGradient g = local_gradient(model, ds, batch);
  const double h = 1e-6;
  for (int j = 0; j < 8; ++j) {
    LinearModel up = model, down = model;
    up.weights[static_cast<std::size_t>(j)] += h;
    down.weights[static_cast<std::size_t>(j)] -= h;
    double fd = (loss_of(up) - loss_of(down)) / (2.0 * h);
    EXPECT_LT(rel_diff(fd, g.grad_w[static_cast<std::size_t>(j)]), 1e-6)
        << "coordinate " << j;
  }
  LinearModel up = model, down = model;
  up.bias += h;
  down.bias -= h;
  double fd_b = (loss_of(up) - loss_of(down)) / (2.0 * h);
  EXPECT_LT(rel_diff(fd_b, g.grad_b), 1e-6);
}

// Any split of a fixed global batch sums to the same gradient: the reason
// adaptive allocation cannot change what the optimizer sees.
TEST(LocalGradient, SplitInvarianceOverRandomSplits) {
  SyntheticDataset ds = generate_dataset(21, 512, 16, 0.3);
  SplitMix64 rng(77);
  LinearModel model;
  model.weights.resize(16);
  for (double& w : model.weights) w = rng.next_gaussian();
  model.bias = rng.next_gaussian();

  std::vector<std::int64_t> global(256);
  std::iota(global.begin(), global.end(), 100);
  BatchGradient full = local_gradient(model, ds, global);

  for (int trial = 0; trial < 25; ++trial) {
    // Random 4-way split, zero-size shards allowed.
    std::vector<std::size_t> cuts = {0, rng.next_below(257), rng.next_below(257),
                                     rng.next_below(257), 256};
    std::sort(cuts.begin(), cuts.end());
    Tensor sum_w(16, 0.0);
    double sum_b = 0.0;
    for (int shard = 0; shard < 4; ++shard) {
      std::span<const std::int64_t> part(global.data() + cuts[static_cast<std::size_t>(shard)],
                                         cuts[static_cast<std::size_t>(shard) + 1] -
                                             cuts[static_cast<std::size_t>(shard)]);
      BatchGradient g = local_gradient(model, ds, part);
      for (int j = 0; j < 16; ++j) sum_w[static_cast<std::size_t>(j)] += g.grad_w[static_cast<std::size_t>(j)];
      sum_b += g.grad_b;
    }
    for (int j = 0; j < 16; ++j) {
      EXPECT_LT(rel_diff(sum_w[static_cast<std::size_t>(j)], full.grad_w[static_cast<std::size_t>(j)]), 1e-9);
    }
    EXPECT_LT(rel_diff(sum_b, full.grad_b), 1e-9);
  }
}

// Mirror of the trainer's update rule, fed with full-batch gradients.
LinearModel single_process_sgd(const TrainConfig& cfg,
                               const SyntheticDataset& ds,
                               std::vector<double>* losses = nullptr) {
  LinearModel model;
  model.weights.assign(static_cast<std::size_t>(ds.d), 0.0);
  model.bias = 0.0;
  BatchAllocation whole;
  whole.global_batch = cfg.global_batch;
  whole.sizes = {{0, cfg.global_batch}};
  Tensor velocity(static_cast<std::size_t>(ds.d) + 1, 0.0);
  const double inv = 1.0 / cfg.global_batch;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto parts = partition_indices(whole, ds.n, epoch, cfg.seed);
    double loss_sum = 0.0;
    for (const StepPartition& part : parts) {
      BatchGradient g = local_gradient(model, ds, part.indices.at(0));
      loss_sum += g.sq_residual_sum * inv;
      for (int j = 0; j < ds.d; ++j) {
        double grad = g.grad_w[static_cast<std::size_t>(j)] * inv +
                      cfg.weight_decay * model.weights[static_cast<std::size_t>(j)];
        velocity[static_cast<std::size_t>(j)] =
            cfg.momentum * velocity[static_cast<std::size_t>(j)] + grad;
        model.weights[static_cast<std::size_t>(j)] -=
            cfg.lr * velocity[static_cast<std::size_t>(j)];
      }
      double grad_b = g.grad_b * inv;
      velocity[static_cast<std::size_t>(ds.d)] =
          cfg.momentum * velocity[static_cast<std::size_t>(ds.d)] + grad_b;
      model.bias -= cfg.lr * velocity[static_cast<std::size_t>(ds.d)];
    }
    if (losses != nullptr) losses->push_back(loss_sum / static_cast<double>(parts.size()));
  }
  return model;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.global_batch = 64;
  cfg.epochs = 2;
  cfg.lr = 0.02;
  cfg.momentum = 0.9;
  cfg.weight_decay = 5e-4;
  cfg.seed = 12345;
  return cfg;
}

TEST(Train, WorldOfOneEqualsPlainSgdExactly) {
  SyntheticDataset ds = generate_dataset(100, 256, 8, 0.1);
  TrainConfig cfg = small_config();

  auto devices = make_devices({{"sim-gpu", 1.0}});
  devices[0].seconds_per_sample = 2e-6;  // keep the sleeps negligible
  ScoreTable scores;
  scores.scores = {{0, 1.0}};
  auto outcome = run_world<TrainReport>(
      devices, [&](int, CollectiveContext& ctx, RendezvousClient&) {
        return train(cfg, ctx, devices, ds, scores);
      });
  ASSERT_TRUE(outcome.ok()) << outcome.error_summary();

  std::vector<double> oracle_losses;
  LinearModel oracle = single_process_sgd(cfg, ds, &oracle_losses);
  const TrainReport& report = outcome.result(0);
  EXPECT_TRUE(bitwise_equal(report.final_model.weights, oracle.weights));
  EXPECT_EQ(report.final_model.bias, oracle.bias);
  EXPECT_EQ(report.final_loss, oracle_losses.back());
  EXPECT_EQ(report.steps_per_epoch, 4);
}

TEST(Train, TwoEqualRanksMatchSingleProcessOracle) {
  SyntheticDataset ds = generate_dataset(200, 256, 8, 0.1);
  TrainConfig cfg = small_config();

  auto devices = make_devices({{"sim-gpu", 1.0}, {"sim-gpu", 1.0}});
  for (auto& d : devices) d.seconds_per_sample = 2e-6;
  ScoreTable scores;
  scores.scores = {{0, 1.0}, {1, 1.0}};
  auto outcome = run_world<TrainReport>(
      devices, [&](int, CollectiveContext& ctx, RendezvousClient&) {
        return train(cfg, ctx, devices, ds, scores);
      });
  ASSERT_TRUE(outcome.ok()) << outcome.error_summary();

  LinearModel oracle = single_process_sgd(cfg, ds);
  for (int r = 0; r < 2; ++r) {
    const TrainReport& report = outcome.result(r);
    for (std::size_t j = 0; j < oracle.weights.size(); ++j) {
      EXPECT_LT(rel_diff(report.final_model.weights[j], oracle.weights[j]), 1e-9);
    }
    EXPECT_LT(rel_diff(report.final_model.bias, oracle.bias), 1e-9);
  }
  EXPECT_TRUE(bitwise_equal(outcome.result(0).final_model.weights,
                            outcome.result(1).final_model.weights))
      << "ranks must agree bitwise after every step";
}

TEST(Train, AdaptiveSplitMatchesEqualSplitLoss) {
  SyntheticDataset ds = generate_dataset(300, 512, 8, 0.1);
  TrainConfig cfg = small_config();
  cfg.global_batch = 128;

  auto devices = make_devices({{"sim-gpu", 1.0}, {"sim-mlu", 0.5}});
  for (auto& d : devices) d.seconds_per_sample = 20e-6;

  ScoreTable equal;
  equal.scores = {{0, 1.0}, {1, 1.0}};
  auto equal_outcome = run_world<TrainReport>(
      devices, [&](int, CollectiveContext& ctx, RendezvousClient&) {
        return train(cfg, ctx, devices, ds, equal);
      });
  ASSERT_TRUE(equal_outcome.ok()) << equal_outcome.error_summary();

  ScoreTable adaptive;
  adaptive.scores = {{0, 1.0}, {1, 0.5}};
  auto adaptive_outcome = run_world<TrainReport>(
      devices, [&](int, CollectiveContext& ctx, RendezvousClient&) {
        return train(cfg, ctx, devices, ds, adaptive);
      });
  ASSERT_TRUE(adaptive_outcome.ok()) << adaptive_outcome.error_summary();

  const TrainReport& eq = equal_outcome.result(0);
  const TrainReport& ad = adaptive_outcome.result(0);
  EXPECT_NE(eq.allocation, ad.allocation);
  EXPECT_LT(rel_diff(eq.final_loss, ad.final_loss), 1e-9)
      << "the split must not change what the optimizer sees";
  for (std::size_t j = 0; j < eq.final_model.weights.size(); ++j) {
    EXPECT_LT(rel_diff(eq.final_model.weights[j], ad.final_model.weights[j]), 1e-9);
  }
}

TEST(Train, LossDecreasesOverEpochsOnTheDefaultConfig) {
  SyntheticDataset ds = generate_dataset(400, 4096, 32, 0.1);
  TrainConfig cfg;
  cfg.global_batch = 256;
  cfg.epochs = 4;
  cfg.lr = 0.05;
  cfg.momentum = 0.9;
  cfg.seed = 400;

  auto devices = make_devices({{"sim-gpu", 1.0}});
  devices[0].seconds_per_sample = 2e-6;
  ScoreTable scores;
  scores.scores = {{0, 1.0}};
  auto outcome = run_world<TrainReport>(
      devices, [&](int, CollectiveContext& ctx, RendezvousClient&) {
        return train(cfg, ctx, devices, ds, scores);
      });
  ASSERT_TRUE(outcome.ok()) << outcome.error_summary();
  const TrainReport& report = outcome.result(0);
  ASSERT_EQ(report.epochs.size(), 4u);
  for (std::size_t e = 1; e < report.epochs.size(); ++e) {
    EXPECT_LT(report.epochs[e].mean_loss, report.epochs[e - 1].mean_loss)
        << "epoch " << e;
  }
}

TEST(Train, ZeroSizeRankStillJoinsCollectives) {
  SyntheticDataset ds = generate_dataset(500, 64, 4, 0.1);
  TrainConfig cfg = small_config();
  cfg.global_batch = 2;  // three ranks, so one gets nothing
  cfg.epochs = 1;

  auto devices =
      make_devices({{"sim-gpu", 1.0}, {"sim-gpu", 1.0}, {"sim-mlu", 1.0}});
  for (auto& d : devices) d.seconds_per_sample = 2e-6;
  ScoreTable scores;
  scores.scores = {{0, 1.0}, {1, 1.0}, {2, 1.0}};
  auto outcome = run_world<TrainReport>(
      devices, [&](int, CollectiveContext& ctx, RendezvousClient&) {
        return train(cfg, ctx, devices, ds, scores);
      });
  ASSERT_TRUE(outcome.ok()) << outcome.error_summary();
  EXPECT_EQ(outcome.result(0).allocation.at(2), 0);
  EXPECT_TRUE(bitwise_equal(outcome.result(0).final_model.weights,
                            outcome.result(2).final_model.weights));
  EXPECT_TRUE(std::isfinite(outcome.result(0).final_loss));
}

TEST(Train, ModeledAccountingAddsUp) {
  SyntheticDataset ds = generate_dataset(600, 256, 8, 0.1);
  TrainConfig cfg = small_config();

  auto devices = make_devices({{"sim-gpu", 1.0}, {"sim-mlu", 0.5}});
  for (auto& d : devices) d.seconds_per_sample = 20e-6;
  ScoreTable scores;
  scores.scores = {{0, 1.0}, {1, 0.5}};
  auto outcome = run_world<TrainReport>(
      devices, [&](int, CollectiveContext& ctx, RendezvousClient&) {
        return train(cfg, ctx, devices, ds, scores);
      });
  ASSERT_TRUE(outcome.ok()) << outcome.error_summary();
  for (int r = 0; r < 2; ++r) {
    const TrainReport& rep = outcome.result(r);
    EXPECT_GE(rep.idle_modeled_s, 0.0);
    EXPECT_NEAR(rep.compute_modeled_s + rep.comm_modeled_s + rep.idle_modeled_s,
                rep.modeled_total_s, 1e-9)
        << "rank " << r;
    EXPECT_EQ(rep.modeled_total_s, outcome.result(0).modeled_total_s)
        << "modeled time must be identical across ranks";
  }
}

TEST(Train, ConfigDigestMismatchFailsSetup) {
  SyntheticDataset ds = generate_dataset(700, 128, 4, 0.1);
  auto devices = make_devices({{"sim-gpu", 1.0}, {"sim-gpu", 1.0}});
  for (auto& d : devices) d.seconds_per_sample = 2e-6;
  ScoreTable scores;
  scores.scores = {{0, 1.0}, {1, 1.0}};

  auto outcome = run_world<int>(
      devices,
      [&](int rank, CollectiveContext& ctx, RendezvousClient&) {
        TrainConfig cfg = small_config();
        cfg.global_batch = 32;
        if (rank == 1) cfg.lr *= 2.0;  // disagreement
        train(cfg, ctx, devices, ds, scores);
        return 0;
      },
      std::chrono::milliseconds(3000));
  EXPECT_FALSE(outcome.ok());
  EXPECT_NE(outcome.errors[1].find("digest"), std::string::npos)
      << "rank 1 error: " << outcome.errors[1];
}

TEST(BenchmarkPhase, SingleRankScoresOne) {
  SyntheticDataset ds = generate_dataset(800, 64, 4, 0.1);
  auto devices = make_devices({{"sim-gpu", 1.0}});
  devices[0].seconds_per_sample = 50e-6;
  auto outcome = run_world<ScoreTable>(
      devices, [&](int, CollectiveContext& ctx, RendezvousClient& rdv) {
        TrainConfig cfg;
        cfg.probe_batch = 8;
        cfg.probe_steps = 3;
        return run_benchmark_phase(rdv, ctx, ds, cfg);
      });
  ASSERT_TRUE(outcome.ok()) << outcome.error_summary();
  EXPECT_EQ(outcome.result(0).scores.at(0), 1.0);
}

TEST(BenchmarkPhase, ScoresTrackSpeedRatioWithinTenPercent) {
  SyntheticDataset ds = generate_dataset(900, 128, 4, 0.1);
  auto devices = make_devices({{"sim-gpu", 1.0}, {"sim-mlu", 0.5}});
  // Big enough probe steps that scheduler jitter stays small.
  for (auto& d : devices) d.seconds_per_sample = 400e-6;
  auto outcome = run_world<ScoreTable>(
      devices, [&](int, CollectiveContext& ctx, RendezvousClient& rdv) {
        TrainConfig cfg;
        cfg.probe_batch = 32;
        cfg.probe_steps = 5;
        return run_benchmark_phase(rdv, ctx, ds, cfg);
      });
  ASSERT_TRUE(outcome.ok()) << outcome.error_summary();
  const ScoreTable& t0 = outcome.result(0);
  EXPECT_EQ(t0.scores.at(0), 1.0);
  EXPECT_NEAR(t0.scores.at(1), 0.5, 0.05);
  EXPECT_EQ(t0.scores, outcome.result(1).scores)
      << "all ranks must compute the identical table";
}

}  // namespace
}  // namespace hetcomm
