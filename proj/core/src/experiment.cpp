#include "hetcomm/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "hetcomm/rng.hpp"
#include "hetcomm/wire.hpp"

namespace hetcomm {

namespace {

using Clock = std::chrono::steady_clock;
using Json = nlohmann::ordered_json;

double elapsed_seconds(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string trim(const std::string& s) {
  auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

double parse_double(const std::string& value, int line_no) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != value.size()) {
    throw ConfigError("line " + std::to_string(line_no) +
                      ": expected a number, got '" + value + "'");
  }
  return v;
}

std::int64_t parse_int(const std::string& value, int line_no) {
  std::size_t used = 0;
  std::int64_t v = 0;
  try {
    v = std::stoll(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != value.size()) {
    throw ConfigError("line " + std::to_string(line_no) +
                      ": expected an integer, got '" + value + "'");
  }
  return v;
}

std::uint64_t parse_u64(const std::string& value, int line_no) {
  std::size_t used = 0;
  std::uint64_t v = 0;
  try {
    v = std::stoull(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != value.size()) {
    throw ConfigError("line " + std::to_string(line_no) +
                      ": expected an unsigned integer, got '" + value + "'");
  }
  return v;
}

}  // namespace

const char* allocation_mode_name(AllocationMode m) {
  switch (m) {
    case AllocationMode::kAdaptive: return "adaptive";
    case AllocationMode::kEqual: return "equal";
    case AllocationMode::kFixed: return "fixed";
  }
  return "unknown";
}

const char* dispatch_mode_name(DispatchMode m) {
  switch (m) {
    case DispatchMode::kKaitian: return "kaitian";
    case DispatchMode::kDirectIntra: return "direct-intra";
  }
  return "unknown";
}

void ExperimentConfig::validate() const {
  if (devices.empty()) {
    throw ConfigError("config needs at least one [device] block");
  }
  try {
    for (int r = 0; r < static_cast<int>(devices.size()); ++r) {
      device_descriptor(r).validate();
    }
  } catch (const InputError& e) {
    throw ConfigError(e.what());
  }
  if (global_batch < 1) throw ConfigError("global_batch must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (dataset_d < 1) throw ConfigError("dataset_d must be >= 1");
  if (dataset_n < global_batch) {
    throw ConfigError("dataset_n must be >= global_batch");
  }
  if (noise_sigma < 0.0) throw ConfigError("noise_sigma must be >= 0");
  if (lr <= 0.0) throw ConfigError("lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) {
    throw ConfigError("momentum must be in [0, 1)");
  }
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (probe_batch < 1 || probe_steps < 1) {
    throw ConfigError("probe_batch and probe_steps must be >= 1");
  }
  if (allocation == AllocationMode::kFixed) {
    if (fixed_ratios.size() != devices.size()) {
      throw ConfigError("fixed allocation needs one ratio per device");
    }
    double sum = 0.0;
    for (double r : fixed_ratios) {
      if (r <= 0.0) throw ConfigError("fixed ratios must be positive");
      sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw ConfigError("fixed ratios must sum to 1 (got " +
                        std::to_string(sum) + ")");
    }
  } else if (!fixed_ratios.empty()) {
    throw ConfigError("fixed ratios are only valid with allocation = fixed:...");
  }
  if (dispatch == DispatchMode::kDirectIntra) {
    for (const DeviceSpec& d : devices) {
      if (d.kind != devices.front().kind) {
        throw ConfigError(
            "dispatch = direct-intra requires a single device kind");
      }
    }
  }
}

DeviceDescriptor ExperimentConfig::device_descriptor(int rank) const {
  const DeviceSpec& spec = devices.at(static_cast<std::size_t>(rank));
  DeviceDescriptor d;
  d.rank = rank;
  d.kind = spec.kind;
  d.speed_factor = spec.speed_factor;
  d.copy_latency = spec.copy_latency;
  d.copy_bandwidth = spec.copy_bandwidth;
  d.seconds_per_sample = spec.seconds_per_sample;
  return d;
}

std::vector<DeviceDescriptor> ExperimentConfig::all_devices() const {
  std::vector<DeviceDescriptor> out;
  out.reserve(devices.size());
  for (int r = 0; r < static_cast<int>(devices.size()); ++r) {
    out.push_back(device_descriptor(r));
  }
  return out;
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig tc;
  tc.global_batch = global_batch;
  tc.epochs = epochs;
  tc.lr = lr;
  tc.momentum = momentum;
  tc.weight_decay = weight_decay;
  tc.seed = master_seed;
  tc.probe_batch = probe_batch;
  tc.probe_steps = probe_steps;
  tc.direct_intra = dispatch == DispatchMode::kDirectIntra;
  return tc;
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  cfg.devices.clear();
  bool in_device = false;
  DeviceSpec current;
  auto flush_device = [&] {
    if (in_device) cfg.devices.push_back(current);
  };

  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    auto hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    std::string line = trim(raw);
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line == "[device]") {
        flush_device();
        current = DeviceSpec{};
        in_device = true;
        continue;
      }
      throw ConfigError("line " + std::to_string(line_no) +
                        ": unknown section " + line);
    }

    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) +
                        ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    }

    if (in_device) {
      if (key == "kind") current.kind = value;
      else if (key == "speed_factor") current.speed_factor = parse_double(value, line_no);
      else if (key == "copy_latency") current.copy_latency = parse_double(value, line_no);
      else if (key == "copy_bandwidth") current.copy_bandwidth = parse_double(value, line_no);
      else if (key == "seconds_per_sample") current.seconds_per_sample = parse_double(value, line_no);
      else {
        throw ConfigError("line " + std::to_string(line_no) +
                          ": unknown device key '" + key + "'");
      }
      continue;
    }

    if (key == "scenario") cfg.scenario = value;
    else if (key == "global_batch") cfg.global_batch = static_cast<int>(parse_int(value, line_no));
    else if (key == "epochs") cfg.epochs = static_cast<int>(parse_int(value, line_no));
    else if (key == "dataset_n") cfg.dataset_n = parse_int(value, line_no);
    else if (key == "dataset_d") cfg.dataset_d = static_cast<int>(parse_int(value, line_no));
    else if (key == "noise_sigma") cfg.noise_sigma = parse_double(value, line_no);
    else if (key == "dataset_seed") cfg.dataset_seed = parse_u64(value, line_no);
    else if (key == "master_seed") cfg.master_seed = parse_u64(value, line_no);
    else if (key == "lr") cfg.lr = parse_double(value, line_no);
    else if (key == "momentum") cfg.momentum = parse_double(value, line_no);
    else if (key == "weight_decay") cfg.weight_decay = parse_double(value, line_no);
    else if (key == "probe_batch") cfg.probe_batch = static_cast<int>(parse_int(value, line_no));
    else if (key == "probe_steps") cfg.probe_steps = static_cast<int>(parse_int(value, line_no));
    else if (key == "output") cfg.output_path = value;
    else if (key == "dispatch") {
      if (value == "kaitian") cfg.dispatch = DispatchMode::kKaitian;
      else if (value == "direct-intra") cfg.dispatch = DispatchMode::kDirectIntra;
      else {
        throw ConfigError("line " + std::to_string(line_no) +
                          ": dispatch must be kaitian or direct-intra");
      }
    } else if (key == "allocation") {
      if (value == "adaptive") cfg.allocation = AllocationMode::kAdaptive;
      else if (value == "equal") cfg.allocation = AllocationMode::kEqual;
      else if (value.starts_with("fixed:")) {
        cfg.allocation = AllocationMode::kFixed;
        cfg.fixed_ratios.clear();
        std::string rest = value.substr(6);
        std::istringstream ratios(rest);
        std::string item;
        while (std::getline(ratios, item, ',')) {
          cfg.fixed_ratios.push_back(parse_double(trim(item), line_no));
        }
        if (cfg.fixed_ratios.empty()) {
          throw ConfigError("line " + std::to_string(line_no) +
                            ": fixed allocation needs ratios");
        }
      } else {
        throw ConfigError("line " + std::to_string(line_no) +
                          ": allocation must be adaptive, equal, or fixed:<ratios>");
      }
    } else {
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" +
                        key + "'");
    }
  }
  flush_device();
  return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config file '" + path + "'");
  }
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config_text(text.str());
}

namespace {

ScoreTable resolve_scores(const ExperimentConfig& config, RendezvousClient& rdv,
                          const CollectiveContext& ctx,
                          const SyntheticDataset& dataset,
                          const TrainConfig& tc) {
  ScoreTable scores;
  switch (config.allocation) {
    case AllocationMode::kAdaptive:
      return run_benchmark_phase(rdv, ctx, dataset, tc);
    case AllocationMode::kEqual:
      for (int r = 0; r < static_cast<int>(config.devices.size()); ++r) {
        scores.scores[r] = 1.0;
      }
      return scores;
    case AllocationMode::kFixed: {
      double max_ratio =
          *std::max_element(config.fixed_ratios.begin(), config.fixed_ratios.end());
      for (int r = 0; r < static_cast<int>(config.devices.size()); ++r) {
        scores.scores[r] = config.fixed_ratios[static_cast<std::size_t>(r)] / max_ratio;
      }
      return scores;
    }
  }
  throw ConfigError("unknown allocation mode");
}

bool same_model(const LinearModel& a, const LinearModel& b) {
  if (a.weights.size() != b.weights.size()) return false;
  if (std::memcmp(&a.bias, &b.bias, sizeof(double)) != 0) return false;
  return a.weights.empty() ||
         std::memcmp(a.weights.data(), b.weights.data(),
                     a.weights.size() * sizeof(double)) == 0;
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& config) {
  config.validate();
  auto total_start = Clock::now();

  const int world = static_cast<int>(config.devices.size());
  SyntheticDataset dataset = generate_dataset(
      config.dataset_seed, config.dataset_n, config.dataset_d, config.noise_sigma);
  const std::vector<DeviceDescriptor> devices = config.all_devices();
  const TrainConfig tc = config.train_config();

  RendezvousServer server =
      RendezvousServer::start({"127.0.0.1:0", world});

  std::vector<RankReport> rank_reports(static_cast<std::size_t>(world));
  std::vector<ScoreTable> rank_scores(static_cast<std::size_t>(world));
  std::vector<std::string> errors(static_cast<std::size_t>(world));
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(world));

  for (int rank = 0; rank < world; ++rank) {
    threads.emplace_back([&, rank] {
      try {
        DeviceDescriptor dev = devices[static_cast<std::size_t>(rank)];
        DataPlane plane;
        RendezvousClient rdv = RendezvousClient::connect(server.address());
        Topology topo = rdv.register_rank(rank, dev, plane.address());
        CollectiveContext ctx =
            CollectiveContext::create(rank, std::move(topo), dev, plane);

        auto bench_start = Clock::now();
        ScoreTable scores = resolve_scores(config, rdv, ctx, dataset, tc);
        double bench_wall = elapsed_seconds(bench_start);

        TrainReport train_report = train(tc, ctx, devices, dataset, scores);

        RankReport& rr = rank_reports[static_cast<std::size_t>(rank)];
        rr.train = std::move(train_report);
        rr.device = dev;
        rr.score = scores.scores.at(rank);
        rr.counters = ctx.counters();
        rr.bench_wall_s = bench_wall;
        rank_scores[static_cast<std::size_t>(rank)] = std::move(scores);
      } catch (const std::exception& e) {
        errors[static_cast<std::size_t>(rank)] = e.what();
      }
    });
  }
  for (std::thread& t : threads) t.join();
  server.shutdown();

  std::string failure;
  for (int rank = 0; rank < world; ++rank) {
    if (!errors[static_cast<std::size_t>(rank)].empty()) {
      if (!failure.empty()) failure += "; ";
      failure += "rank " + std::to_string(rank) + ": " +
                 errors[static_cast<std::size_t>(rank)];
    }
  }
  if (!failure.empty()) {
    throw ExperimentError("experiment '" + config.scenario +
                          "' failed: " + failure);
  }

  // Every rank must have finished with identical parameters, losses, and
  // scores; anything else means the collective layer broke its contract.
  const RankReport& first = rank_reports.front();
  for (int rank = 1; rank < world; ++rank) {
    const RankReport& rr = rank_reports[static_cast<std::size_t>(rank)];
    if (!same_model(rr.train.final_model, first.train.final_model) ||
        rr.train.final_loss != first.train.final_loss ||
        rank_scores[static_cast<std::size_t>(rank)].scores !=
            rank_scores.front().scores) {
      throw ExperimentError("experiment '" + config.scenario + "': rank " +
                            std::to_string(rank) +
                            " diverged from rank 0 after training");
    }
  }

  ExperimentReport report;
  report.config = config;
  report.scores = rank_scores.front();
  report.steps_per_epoch = first.train.steps_per_epoch;
  report.final_loss = first.train.final_loss;
  report.modeled_total_s = first.train.modeled_total_s;
  for (const RankReport& rr : rank_reports) {
    report.wall_train_s = std::max(report.wall_train_s, rr.train.wall_train_s);
    report.bench_wall_s = std::max(report.bench_wall_s, rr.bench_wall_s);
  }
  report.ranks = std::move(rank_reports);
  report.total_wall_s = elapsed_seconds(total_start);

  if (!config.output_path.empty()) {
    write_report_file(config.output_path, report_to_json(report));
  }
  return report;
}

ComparisonReport compare_scenarios(const std::vector<ExperimentConfig>& configs,
                                   const std::string& output_path) {
  if (configs.size() < 2) {
    throw ConfigError("compare needs at least two configs");
  }
  for (const ExperimentConfig& c : configs) {
    if (c.dataset_seed != configs.front().dataset_seed) {
      throw ConfigError(
          "compared scenarios must share dataset_seed so results are "
          "dataset-variance free");
    }
  }
  ComparisonReport report;
  for (const ExperimentConfig& c : configs) {
    ExperimentConfig run_config = c;
    run_config.output_path.clear();  // only the combined report is written
    report.runs.push_back(run_experiment(run_config));
  }
  for (std::size_t i = 0; i < report.runs.size(); ++i) {
    for (std::size_t j = i + 1; j < report.runs.size(); ++j) {
      const ExperimentReport& base = report.runs[i];
      const ExperimentReport& cand = report.runs[j];
      ScenarioComparison cmp;
      cmp.baseline = base.config.scenario;
      cmp.candidate = cand.config.scenario;
      cmp.wall_speedup = base.wall_train_s / cand.wall_train_s;
      cmp.modeled_speedup = base.modeled_total_s / cand.modeled_total_s;
      cmp.final_loss_delta = cand.final_loss - base.final_loss;
      cmp.overhead_pct =
          (cand.wall_train_s - base.wall_train_s) / base.wall_train_s * 100.0;
      report.comparisons.push_back(cmp);
    }
  }
  if (!output_path.empty()) {
    write_report_file(output_path, report_to_json(report));
  }
  return report;
}

// ---------------------------------------------------------------------------
// JSON reports

namespace {

Json config_to_json(const ExperimentConfig& c) {
  Json devices = Json::array();
  for (const DeviceSpec& d : c.devices) {
    devices.push_back({{"kind", d.kind},
                       {"speed_factor", d.speed_factor},
                       {"copy_latency", d.copy_latency},
                       {"copy_bandwidth", d.copy_bandwidth},
                       {"seconds_per_sample", d.seconds_per_sample}});
  }
  Json j{{"scenario", c.scenario},
         {"global_batch", c.global_batch},
         {"epochs", c.epochs},
         {"dataset",
          {{"n", c.dataset_n},
           {"d", c.dataset_d},
           {"noise_sigma", c.noise_sigma},
           {"seed", c.dataset_seed}}},
         {"optimizer",
          {{"lr", c.lr}, {"momentum", c.momentum}, {"weight_decay", c.weight_decay}}},
         {"allocation", allocation_mode_name(c.allocation)},
         {"dispatch", dispatch_mode_name(c.dispatch)},
         {"master_seed", c.master_seed},
         {"probe_batch", c.probe_batch},
         {"probe_steps", c.probe_steps},
         {"devices", devices}};
  if (c.allocation == AllocationMode::kFixed) {
    j["fixed_ratios"] = c.fixed_ratios;
  }
  return j;
}

Json experiment_to_json(const ExperimentReport& r) {
  Json scores = Json::object();
  for (const auto& [rank, score] : r.scores.scores) {
    scores[std::to_string(rank)] = score;
  }
  Json allocation = Json::object();
  if (!r.ranks.empty()) {
    for (const auto& [rank, size] : r.ranks.front().train.allocation) {
      allocation[std::to_string(rank)] = size;
    }
  }
  Json ranks = Json::array();
  for (const RankReport& rr : r.ranks) {
    Json epochs = Json::array();
    for (const EpochStats& e : rr.train.epochs) {
      epochs.push_back({{"wall_s", e.wall_s},
                        {"modeled_s", e.modeled_s},
                        {"mean_loss", e.mean_loss}});
    }
    ranks.push_back({{"rank", rr.train.rank},
                     {"kind", rr.device.kind},
                     {"speed_factor", rr.device.speed_factor},
                     {"score", rr.score},
                     {"batch_size", rr.train.allocation.at(rr.train.rank)},
                     {"compute_modeled_s", rr.train.compute_modeled_s},
                     {"comm_modeled_s", rr.train.comm_modeled_s},
                     {"idle_modeled_s", rr.train.idle_modeled_s},
                     {"wall_train_s", rr.train.wall_train_s},
                     {"bench_wall_s", rr.bench_wall_s},
                     {"host_copies", rr.counters.host_copies},
                     {"host_copy_modeled_s", rr.counters.host_copy_modeled_s},
                     {"inter_connections", rr.counters.inter_connections},
                     {"inter_bytes", rr.counters.inter_bytes},
                     {"intra_bytes", rr.counters.intra_bytes},
                     {"collectives", rr.counters.collectives},
                     {"epochs", epochs}});
  }
  return Json{{"schema", "hetcomm-experiment-v1"},
              {"config", config_to_json(r.config)},
              {"scores", scores},
              {"allocation", allocation},
              {"steps_per_epoch", r.steps_per_epoch},
              {"final_loss", r.final_loss},
              {"wall_train_s", r.wall_train_s},
              {"modeled_total_s", r.modeled_total_s},
              {"bench_wall_s", r.bench_wall_s},
              {"total_wall_s", r.total_wall_s},
              {"ranks", ranks}};
}

}  // namespace

std::string report_to_json(const ExperimentReport& report) {
  return experiment_to_json(report).dump(2) + "\n";
}

std::string report_to_json(const ComparisonReport& report) {
  Json runs = Json::array();
  for (const ExperimentReport& r : report.runs) {
    runs.push_back(experiment_to_json(r));
  }
  Json comparisons = Json::array();
  for (const ScenarioComparison& c : report.comparisons) {
    comparisons.push_back({{"baseline", c.baseline},
                           {"candidate", c.candidate},
                           {"wall_speedup", c.wall_speedup},
                           {"modeled_speedup", c.modeled_speedup},
                           {"final_loss_delta", c.final_loss_delta},
                           {"overhead_pct", c.overhead_pct}});
  }
  Json j{{"schema", "hetcomm-compare-v1"},
         {"runs", runs},
         {"comparisons", comparisons}};
  return j.dump(2) + "\n";
}

void write_report_file(const std::string& path, const std::string& json) {
  std::ofstream out(path);
  if (!out) {
    throw ConfigError("cannot write report file '" + path + "'");
  }
  out << json;
}

// ---------------------------------------------------------------------------
// Selftest

namespace {

bool check_wire_roundtrip(std::string* detail, bool inject_fault) {
  SplitMix64 rng(0x5EEDBEEF);
  for (int i = 0; i < 1000; ++i) {
    auto type = static_cast<wire::MsgType>(1 + rng.next_below(9));
    std::vector<std::uint8_t> payload(rng.next_below(2049));
    for (auto& b : payload) b = static_cast<std::uint8_t>(rng.next() & 0xFF);

    std::vector<std::uint8_t> encoded = wire::encode_frame(type, payload);
    if (inject_fault && i == 500 && !payload.empty()) {
      encoded[wire::kHeaderSize] ^= 0x01;  // silent payload corruption
    }
    wire::MemorySource source(encoded);
    wire::Frame decoded = wire::decode_frame(source);
    if (decoded.type != type || decoded.payload != payload) {
      *detail = "frame " + std::to_string(i) + " did not roundtrip";
      return false;
    }
    if (source.remaining() != 0) {
      *detail = "frame " + std::to_string(i) + " left trailing bytes";
      return false;
    }
  }
  return true;
}

bool check_tensor_roundtrip(std::string* detail) {
  SplitMix64 rng(0xACE0FBA5E);
  const double specials[] = {0.0, -0.0, 1.0, -1.0, 1e308, -1e308,
                             5e-324, -5e-324, 0.1, 1e-300};
  for (int i = 0; i < 1000; ++i) {
    Tensor t(rng.next_below(513));
    for (double& v : t) {
      if (rng.next_below(8) == 0) {
        v = specials[rng.next_below(std::size(specials))];
      } else {
        v = rng.next_gaussian() * 1e3;
      }
    }
    Tensor back = wire::decode_tensor(wire::encode_tensor(t));
    if (back.size() != t.size() ||
        (!t.empty() && std::memcmp(back.data(), t.data(),
                                   t.size() * sizeof(double)) != 0)) {
      *detail = "tensor " + std::to_string(i) + " not bitwise identical";
      return false;
    }
  }
  return true;
}

bool check_allocation_properties(std::string* detail) {
  SplitMix64 rng(0xA110C473);
  for (int i = 0; i < 1000; ++i) {
    int ranks = 1 + static_cast<int>(rng.next_below(8));
    ScoreTable scores;
    for (int r = 0; r < ranks; ++r) {
      scores.scores[r] = 0.05 + 0.95 * rng.next_double();
    }
    scores.scores[static_cast<int>(rng.next_below(static_cast<std::uint64_t>(ranks)))] = 1.0;
    int batch = 1 + static_cast<int>(rng.next_below(4096));

    BatchAllocation alloc = allocate_batches(scores, batch);
    double total_score = 0.0;
    for (const auto& [r, s] : scores.scores) total_score += s;
    int sum = 0;
    for (const auto& [r, size] : alloc.sizes) {
      sum += size;
      double quota = scores.scores.at(r) / total_score * batch;
      if (size != static_cast<int>(std::floor(quota)) &&
          size != static_cast<int>(std::ceil(quota))) {
        *detail = "case " + std::to_string(i) + ": size off its quota";
        return false;
      }
    }
    if (sum != batch) {
      *detail = "case " + std::to_string(i) + ": sizes sum to " +
                std::to_string(sum) + ", want " + std::to_string(batch);
      return false;
    }
    for (const auto& [ra, sa] : scores.scores) {
      for (const auto& [rb, sb] : scores.scores) {
        if (sa >= sb && alloc.sizes.at(ra) < alloc.sizes.at(rb)) {
          *detail = "case " + std::to_string(i) + ": monotonicity violated";
          return false;
        }
      }
    }
    ScoreTable scaled;
    for (const auto& [r, s] : scores.scores) scaled.scores[r] = s * 3.25;
    if (allocate_batches(scaled, batch).sizes != alloc.sizes) {
      *detail = "case " + std::to_string(i) + ": not scale invariant";
      return false;
    }
  }
  return true;
}

bool check_four_rank_allreduce(std::string* detail) {
  const char* kinds[] = {"sim-gpu", "sim-gpu", "sim-mlu", "sim-mlu"};
  constexpr int kWorld = 4;
  constexpr std::size_t kLen = 256;
  constexpr int kRounds = 3;

  std::vector<std::vector<Tensor>> inputs(kWorld);
  SplitMix64 rng(0xC011EC7);
  for (int r = 0; r < kWorld; ++r) {
    for (int round = 0; round < kRounds; ++round) {
      Tensor t(kLen);
      for (double& v : t) v = rng.next_gaussian();
      inputs[static_cast<std::size_t>(r)].push_back(std::move(t));
    }
  }
  std::vector<Tensor> expected(kRounds, Tensor(kLen, 0.0));
  for (int round = 0; round < kRounds; ++round) {
    for (std::size_t i = 0; i < kLen; ++i) {
      for (int r = 0; r < kWorld; ++r) {
        expected[static_cast<std::size_t>(round)][i] +=
            inputs[static_cast<std::size_t>(r)][static_cast<std::size_t>(round)][i];
      }
    }
  }

  RendezvousServer server = RendezvousServer::start({"127.0.0.1:0", kWorld});
  std::vector<std::vector<Tensor>> results(kWorld);
  std::vector<std::string> errors(kWorld);
  std::vector<std::thread> threads;
  for (int rank = 0; rank < kWorld; ++rank) {
    threads.emplace_back([&, rank] {
      try {
        DeviceDescriptor dev;
        dev.rank = rank;
        dev.kind = kinds[rank];
        dev.copy_latency = 1e-6;
        DataPlane plane;
        RendezvousClient rdv = RendezvousClient::connect(server.address());
        Topology topo = rdv.register_rank(rank, dev, plane.address());
        CollectiveContext ctx =
            CollectiveContext::create(rank, std::move(topo), dev, plane);
        for (int round = 0; round < kRounds; ++round) {
          results[static_cast<std::size_t>(rank)].push_back(ctx.allreduce(
              inputs[static_cast<std::size_t>(rank)][static_cast<std::size_t>(round)]));
        }
      } catch (const std::exception& e) {
        errors[static_cast<std::size_t>(rank)] = e.what();
      }
    });
  }
  for (std::thread& t : threads) t.join();
  server.shutdown();

  for (int rank = 0; rank < kWorld; ++rank) {
    if (!errors[static_cast<std::size_t>(rank)].empty()) {
      *detail = "rank " + std::to_string(rank) + ": " +
                errors[static_cast<std::size_t>(rank)];
      return false;
    }
  }
  for (int round = 0; round < kRounds; ++round) {
    const Tensor& rank0 = results[0][static_cast<std::size_t>(round)];
    for (int rank = 1; rank < kWorld; ++rank) {
      const Tensor& mine = results[static_cast<std::size_t>(rank)][static_cast<std::size_t>(round)];
      if (std::memcmp(mine.data(), rank0.data(), kLen * sizeof(double)) != 0) {
        *detail = "round " + std::to_string(round) + ": ranks disagree bitwise";
        return false;
      }
    }
    for (std::size_t i = 0; i < kLen; ++i) {
      double want = expected[static_cast<std::size_t>(round)][i];
      double got = rank0[i];
      if (std::abs(got - want) > 1e-12 * (1.0 + std::abs(want))) {
        *detail = "round " + std::to_string(round) + ": element " +
                  std::to_string(i) + " off the oracle";
        return false;
      }
    }
  }
  return true;
}

}  // namespace

int selftest(std::ostream& out, bool inject_wire_fault) {
  int failures = 0;
  auto check = [&](const char* name, auto&& fn) {
    std::string detail;
    bool ok = false;
    try {
      ok = fn(&detail);
    } catch (const std::exception& e) {
      detail = e.what();
    }
    out << (ok ? "PASS" : "FAIL") << "  " << name;
    if (!ok && !detail.empty()) out << "  (" << detail << ")";
    out << "\n";
    if (!ok) failures += 1;
  };

  check("wire frame roundtrip, 1000 cases", [&](std::string* d) {
    return check_wire_roundtrip(d, inject_wire_fault);
  });
  check("tensor codec bitwise roundtrip, 1000 cases", check_tensor_roundtrip);
  check("batch allocation properties, 1000 cases", check_allocation_properties);
  check("four-rank hierarchical allreduce oracle", check_four_rank_allreduce);

  out << (failures == 0 ? "selftest: all checks passed"
                        : "selftest: " + std::to_string(failures) +
                              " check(s) FAILED")
      << "\n";
  return failures;
}

}  // namespace hetcomm
