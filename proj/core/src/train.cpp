#include "hetcomm/train.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <numeric>

#include "hetcomm/rng.hpp"
#include "hetcomm/wire.hpp"

namespace hetcomm {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_seconds(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t hash = 1469598103934665603ULL;
  for (std::uint8_t b : bytes) {
    hash ^= b;
    hash *= 1099511628211ULL;
  }
  return hash;
}

std::uint64_t config_digest(const TrainConfig& cfg, const SyntheticDataset& ds,
                            const ScoreTable& scores) {
  std::vector<std::uint8_t> buf;
  wire::put_u32(buf, static_cast<std::uint32_t>(cfg.global_batch));
  wire::put_u32(buf, static_cast<std::uint32_t>(cfg.epochs));
  wire::put_f64(buf, cfg.lr);
  wire::put_f64(buf, cfg.momentum);
  wire::put_f64(buf, cfg.weight_decay);
  wire::put_u64(buf, cfg.seed);
  wire::put_u8(buf, cfg.direct_intra ? 1 : 0);
  wire::put_u64(buf, ds.seed);
  wire::put_u64(buf, static_cast<std::uint64_t>(ds.n));
  wire::put_u32(buf, static_cast<std::uint32_t>(ds.d));
  for (const auto& [rank, score] : scores.scores) {
    wire::put_u32(buf, static_cast<std::uint32_t>(rank));
    wire::put_f64(buf, score);
  }
  return fnv1a64(buf);
}

// Modeled steady-state step time shared by all ranks: the straggler's
// compute plus the worst per-leader staging cost of one gradient exchange.
double modeled_step_seconds(const BatchAllocation& alloc,
                            const std::vector<DeviceDescriptor>& devices,
                            const Topology& topo, std::size_t tensor_len) {
  auto per_rank = predicted_step_time(alloc, devices);
  double max_compute = 0.0;
  for (const auto& [rank, t] : per_rank) max_compute = std::max(max_compute, t);
  double max_comm = 0.0;
  if (!topo.single_group()) {
    double bytes = 8.0 * static_cast<double>(tensor_len);
    for (const DeviceDescriptor& d : devices) {
      if (!topo.is_leader(d.rank)) continue;
      double per_leader = 2.0 * (d.copy_latency + bytes / d.copy_bandwidth);
      max_comm = std::max(max_comm, per_leader);
    }
  }
  return max_compute + max_comm;
}

}  // namespace

SyntheticDataset generate_dataset(std::uint64_t seed, std::int64_t n, int d,
                                  double noise_sigma) {
  if (n < 1 || d < 1) {
    throw InputError("generate_dataset: n and d must be >= 1");
  }
  if (noise_sigma < 0.0) {
    throw InputError("generate_dataset: noise_sigma must be >= 0");
  }
  SyntheticDataset ds;
  ds.n = n;
  ds.d = d;
  ds.seed = seed;
  SplitMix64 rng(seed);
  Tensor hidden_w(static_cast<std::size_t>(d));
  for (double& w : hidden_w) w = rng.next_gaussian();
  double hidden_b = rng.next_gaussian();

  ds.features.resize(static_cast<std::size_t>(n) * static_cast<std::size_t>(d));
  ds.targets.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    double dot = 0.0;
    for (int j = 0; j < d; ++j) {
      double x = rng.next_gaussian();
      ds.features[static_cast<std::size_t>(i) * static_cast<std::size_t>(d) +
                  static_cast<std::size_t>(j)] = x;
      dot += x * hidden_w[static_cast<std::size_t>(j)];
    }
    ds.targets[static_cast<std::size_t>(i)] =
        dot + hidden_b + noise_sigma * rng.next_gaussian();
  }
  return ds;
}

BatchGradient local_gradient(const LinearModel& model,
                             const SyntheticDataset& ds,
                             std::span<const std::int64_t> batch) {
  const int d = ds.d;
  if (static_cast<int>(model.weights.size()) != d) {
    throw InputError("local_gradient: model dimension " +
                     std::to_string(model.weights.size()) +
                     " does not match dataset dimension " + std::to_string(d));
  }
  BatchGradient g;
  g.grad_w.assign(static_cast<std::size_t>(d), 0.0);
  g.count = static_cast<std::int64_t>(batch.size());
  for (std::int64_t idx : batch) {
    if (idx < 0 || idx >= ds.n) {
      throw InputError("local_gradient: index " + std::to_string(idx) +
                       " outside dataset of " + std::to_string(ds.n));
    }
    auto x = ds.row(idx);
    double residual = model.bias - ds.targets[static_cast<std::size_t>(idx)];
    for (int j = 0; j < d; ++j) {
      residual += x[static_cast<std::size_t>(j)] * model.weights[static_cast<std::size_t>(j)];
    }
    for (int j = 0; j < d; ++j) {
      g.grad_w[static_cast<std::size_t>(j)] += 2.0 * residual * x[static_cast<std::size_t>(j)];
    }
    g.grad_b += 2.0 * residual;
    g.sq_residual_sum += residual * residual;
  }
  return g;
}

ScoreTable run_benchmark_phase(RendezvousClient& rdv,
                               const CollectiveContext& ctx,
                               const SyntheticDataset& ds,
                               const TrainConfig& cfg) {
  const DeviceDescriptor& device = ctx.device();
  const int world = ctx.topology().world_size;

  LinearModel probe_model;
  probe_model.weights.assign(static_cast<std::size_t>(ds.d), 0.0);
  std::vector<std::int64_t> probe_batch(
      static_cast<std::size_t>(std::min<std::int64_t>(cfg.probe_batch, ds.n)));
  std::iota(probe_batch.begin(), probe_batch.end(), 0);

  double median = benchmark_device(
      device, static_cast<int>(probe_batch.size()), cfg.probe_steps,
      [&](const DeviceDescriptor& d, int batch) {
        simulate_compute(d, batch);
        (void)local_gradient(probe_model, ds,
                             std::span<const std::int64_t>(probe_batch.data(),
                                                           static_cast<std::size_t>(batch)));
      });

  std::vector<std::uint8_t> value;
  wire::put_f64(value, median);
  rdv.kv_put("bench/" + std::to_string(ctx.rank()), value);
  rdv.barrier("bench", world);

  std::map<int, double> times;
  for (int r = 0; r < world; ++r) {
    auto bytes = rdv.kv_get("bench/" + std::to_string(r),
                            std::chrono::milliseconds(10000));
    std::size_t offset = 0;
    times[r] = wire::get_f64(bytes, offset);
  }
  return compute_scores(times);
}

TrainReport train(const TrainConfig& cfg, CollectiveContext& ctx,
                  const std::vector<DeviceDescriptor>& devices,
                  const SyntheticDataset& ds, const ScoreTable& scores) {
  if (cfg.global_batch < 1 || cfg.epochs < 1) {
    throw InputError("train: global_batch and epochs must be >= 1");
  }
  scores.validate();
  const int my_rank = ctx.rank();
  const int d = ds.d;

  auto reduce = [&](const Tensor& t) {
    return cfg.direct_intra ? ctx.intra_allreduce(t) : ctx.allreduce(t);
  };
  auto bcast = [&](const Tensor& t, int root) {
    return cfg.direct_intra ? ctx.intra_broadcast(t, root) : ctx.broadcast(t, root);
  };

  // Same config everywhere, or fail before any step runs. The digest rides
  // as two u32 halves so the payload stays finite.
  std::uint64_t digest = config_digest(cfg, ds, scores);
  Tensor digest_t = {static_cast<double>(digest & 0xFFFFFFFFULL),
                     static_cast<double>(digest >> 32)};
  Tensor agreed = bcast(digest_t, 0);
  if (agreed != digest_t) {
    throw SetupError("config digest mismatch at rank " +
                     std::to_string(my_rank) +
                     ": ranks are not running the same configuration");
  }

  // Rank 0's initial parameters become everyone's starting point.
  LinearModel model;
  model.weights.assign(static_cast<std::size_t>(d), 0.0);
  model.bias = 0.0;
  {
    Tensor params(model.weights);
    params.push_back(model.bias);
    Tensor synced = bcast(params, 0);
    model.weights.assign(synced.begin(), synced.end() - 1);
    model.bias = synced.back();
  }

  BatchAllocation alloc = allocate_batches(scores, cfg.global_batch);
  const std::size_t grad_len = static_cast<std::size_t>(d) + 2;  // w | b | loss
  const double step_modeled =
      modeled_step_seconds(alloc, devices, ctx.topology(), grad_len);

  TrainReport report;
  report.rank = my_rank;
  report.allocation = alloc.sizes;

  Tensor velocity(static_cast<std::size_t>(d) + 1, 0.0);
  const double inv_batch = 1.0 / static_cast<double>(cfg.global_batch);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto parts = partition_indices(alloc, ds.n, epoch, cfg.seed);
    report.steps_per_epoch = static_cast<int>(parts.size());
    auto epoch_start = Clock::now();
    double comm_before = ctx.counters().host_copy_modeled_s;
    double loss_sum = 0.0;

    for (const StepPartition& part : parts) {
      const std::vector<std::int64_t>& mine = part.indices.at(my_rank);
      report.compute_modeled_s +=
          simulate_compute(ctx.device(), static_cast<std::int64_t>(mine.size()));
      BatchGradient g = local_gradient(model, ds, mine);

      Tensor buf(grad_len);
      std::copy(g.grad_w.begin(), g.grad_w.end(), buf.begin());
      buf[static_cast<std::size_t>(d)] = g.grad_b;
      buf[static_cast<std::size_t>(d) + 1] = g.sq_residual_sum;
      Tensor global = reduce(buf);

      loss_sum += global[static_cast<std::size_t>(d) + 1] * inv_batch;
      for (int j = 0; j < d; ++j) {
        double grad = global[static_cast<std::size_t>(j)] * inv_batch +
                      cfg.weight_decay * model.weights[static_cast<std::size_t>(j)];
        velocity[static_cast<std::size_t>(j)] =
            cfg.momentum * velocity[static_cast<std::size_t>(j)] + grad;
        model.weights[static_cast<std::size_t>(j)] -=
            cfg.lr * velocity[static_cast<std::size_t>(j)];
      }
      double grad_b = global[static_cast<std::size_t>(d)] * inv_batch;
      velocity[static_cast<std::size_t>(d)] =
          cfg.momentum * velocity[static_cast<std::size_t>(d)] + grad_b;
      model.bias -= cfg.lr * velocity[static_cast<std::size_t>(d)];
    }

    EpochStats stats;
    stats.wall_s = elapsed_seconds(epoch_start);
    stats.modeled_s = static_cast<double>(parts.size()) * step_modeled;
    stats.mean_loss = loss_sum / static_cast<double>(parts.size());
    report.comm_modeled_s += ctx.counters().host_copy_modeled_s - comm_before;
    report.wall_train_s += stats.wall_s;
    report.modeled_total_s += stats.modeled_s;
    report.epochs.push_back(stats);
  }

  report.idle_modeled_s = std::max(
      0.0, report.modeled_total_s - report.compute_modeled_s - report.comm_modeled_s);
  report.final_loss = report.epochs.back().mean_loss;
  report.final_model = model;
  return report;
}

}  // namespace hetcomm
