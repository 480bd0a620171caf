#pragma once

// Config-driven runs behind the command-line tool: dataset generation,
// training, evaluation reports, and the ablation and data-size grids.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsp/evaluation.hpp"
#include "fsp/hashing.hpp"
#include "fsp/policy.hpp"
#include "fsp/scenario.hpp"

namespace fsp {

/// Bad flags or config values. The CLI maps this to exit code 1.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Configuration

struct DataConfig {
  std::size_t count = 120;
  std::uint64_t seed = 7;
  double epsilon = 0.10;
  std::string path = "dataset.jsonl";
};

struct PolicyConfig {
  std::size_t horizon = 16;
  int diffusion_steps = 20;
  double beta_start = 1e-4;
  double beta_end = 0.2;
  std::vector<std::size_t> hidden = {256, 256, 256};
  std::size_t embed_width = 16;
  std::size_t action_stride = 2;
};

struct TrainConfig {
  double lambda = 1.0;
  double delta = 0.10;
  std::size_t steps = 2000;
  std::size_t batch_size = 32;
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;
  /// Training uses the first `episodes` records of the dataset; 0 means all.
  std::size_t episodes = 40;
  std::string checkpoint = "checkpoint.json";
  std::string log = "train_log.csv";
};

struct EvalConfig {
  std::string level = "large";
  std::uint64_t seed = 0;
  /// Base episodes for evaluation: the first `episodes` records; 0 means all.
  std::size_t episodes = 40;
  std::size_t bootstrap = 2000;
  std::size_t chunks_per_episode = 3;
  std::string checkpoint = "checkpoint.json";
  std::string report = "eval";
};

struct AblateConfig {
  std::vector<double> deltas = {0.05, 0.10, 0.15};
  std::vector<double> lambdas = {1.0, 4.0};
  std::string report = "ablate";
};

struct DatascaleConfig {
  std::vector<std::size_t> sizes = {40, 80, 120};
  std::string report = "datascale";
};

struct RunConfig {
  /// Chain definition file; empty selects the default planar arm.
  std::string chain;
  /// Root for every relative path below. Not part of the config hash.
  std::string out_dir = ".";
  DataConfig data;
  PolicyConfig policy;
  TrainConfig train;
  EvalConfig eval;
  AblateConfig ablate;
  DatascaleConfig datascale;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["chain"] = chain;
    j["out_dir"] = out_dir;
    j["data"] = {{"count", data.count}, {"seed", data.seed}, {"epsilon", data.epsilon}, {"path", data.path}};
    j["policy"] = {{"horizon", policy.horizon},
                   {"diffusion_steps", policy.diffusion_steps},
                   {"beta_start", policy.beta_start},
                   {"beta_end", policy.beta_end},
                   {"hidden", policy.hidden},
                   {"embed_width", policy.embed_width},
                   {"action_stride", policy.action_stride}};
    j["train"] = {{"lambda", train.lambda},         {"delta", train.delta},
                  {"steps", train.steps},           {"batch_size", train.batch_size},
                  {"learning_rate", train.learning_rate}, {"seed", train.seed},
                  {"episodes", train.episodes},     {"checkpoint", train.checkpoint},
                  {"log", train.log}};
    j["eval"] = {{"level", eval.level},
                 {"seed", eval.seed},
                 {"episodes", eval.episodes},
                 {"bootstrap", eval.bootstrap},
                 {"chunks_per_episode", eval.chunks_per_episode},
                 {"checkpoint", eval.checkpoint},
                 {"report", eval.report}};
    j["ablate"] = {{"deltas", ablate.deltas}, {"lambdas", ablate.lambdas}, {"report", ablate.report}};
    j["datascale"] = {{"sizes", datascale.sizes}, {"report", datascale.report}};
    return j;
  }

  /// Reads a config; absent keys keep their defaults, unknown keys are errors.
  static RunConfig from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw UsageError("config: top level must be an object");
    RunConfig c;
    auto section = [&](const char* name, const std::vector<std::string>& keys) -> const nlohmann::json* {
      if (!j.contains(name)) return nullptr;
      const auto& s = j.at(name);
      if (!s.is_object()) throw UsageError(std::string("config: section '") + name + "' must be an object");
      for (const auto& [k, v] : s.items()) {
        if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
          throw UsageError(std::string("config: unknown key '") + name + "." + k + "'");
        }
      }
      return &s;
    };
    for (const auto& [k, v] : j.items()) {
      static const std::vector<std::string> top = {"chain", "out_dir", "data", "policy", "train", "eval", "ablate", "datascale"};
      if (std::find(top.begin(), top.end(), k) == top.end()) throw UsageError("config: unknown key '" + k + "'");
    }
    try {
      auto get = [](const nlohmann::json* s, const char* key, auto& field) {
        if (s != nullptr && s->contains(key)) s->at(key).get_to(field);
      };
      if (j.contains("chain")) j.at("chain").get_to(c.chain);
      if (j.contains("out_dir")) j.at("out_dir").get_to(c.out_dir);
      const auto* d = section("data", {"count", "seed", "epsilon", "path"});
      get(d, "count", c.data.count);
      get(d, "seed", c.data.seed);
      get(d, "epsilon", c.data.epsilon);
      get(d, "path", c.data.path);
      const auto* p = section("policy", {"horizon", "diffusion_steps", "beta_start", "beta_end", "hidden",
                                         "embed_width", "action_stride"});
      get(p, "horizon", c.policy.horizon);
      get(p, "diffusion_steps", c.policy.diffusion_steps);
      get(p, "beta_start", c.policy.beta_start);
      get(p, "beta_end", c.policy.beta_end);
      get(p, "hidden", c.policy.hidden);
      get(p, "embed_width", c.policy.embed_width);
      get(p, "action_stride", c.policy.action_stride);
      const auto* t = section("train", {"lambda", "delta", "steps", "batch_size", "learning_rate", "seed", "episodes",
                                        "checkpoint", "log"});
      get(t, "lambda", c.train.lambda);
      get(t, "delta", c.train.delta);
      get(t, "steps", c.train.steps);
      get(t, "batch_size", c.train.batch_size);
      get(t, "learning_rate", c.train.learning_rate);
      get(t, "seed", c.train.seed);
      get(t, "episodes", c.train.episodes);
      get(t, "checkpoint", c.train.checkpoint);
      get(t, "log", c.train.log);
      const auto* e =
          section("eval", {"level", "seed", "episodes", "bootstrap", "chunks_per_episode", "checkpoint", "report"});
      get(e, "level", c.eval.level);
      get(e, "seed", c.eval.seed);
      get(e, "episodes", c.eval.episodes);
      get(e, "bootstrap", c.eval.bootstrap);
      get(e, "chunks_per_episode", c.eval.chunks_per_episode);
      get(e, "checkpoint", c.eval.checkpoint);
      get(e, "report", c.eval.report);
      const auto* a = section("ablate", {"deltas", "lambdas", "report"});
      get(a, "deltas", c.ablate.deltas);
      get(a, "lambdas", c.ablate.lambdas);
      get(a, "report", c.ablate.report);
      const auto* s = section("datascale", {"sizes", "report"});
      get(s, "sizes", c.datascale.sizes);
      get(s, "report", c.datascale.report);
    } catch (const nlohmann::json::exception& ex) {
      throw UsageError(std::string("config: ") + ex.what());
    }
    return c;
  }

  void validate() const {
    auto require = [](bool ok, const std::string& msg) {
      if (!ok) throw UsageError("config: " + msg);
    };
    require(!out_dir.empty(), "out_dir must not be empty");
    require(data.count >= 1, "data.count must be at least 1");
    require(data.epsilon > 0.0, "data.epsilon must be positive");
    require(policy.horizon >= 1, "policy.horizon must be at least 1");
    require(policy.diffusion_steps >= 1, "policy.diffusion_steps must be at least 1");
    require(policy.beta_start > 0.0 && policy.beta_start <= policy.beta_end && policy.beta_end < 1.0,
            "policy betas must satisfy 0 < beta_start <= beta_end < 1");
    require(!policy.hidden.empty(), "policy.hidden must list at least one layer");
    for (std::size_t h : policy.hidden) require(h >= 1, "policy.hidden widths must be positive");
    require(policy.embed_width >= 2 && policy.embed_width % 2 == 0, "policy.embed_width must be even and >= 2");
    require(policy.action_stride >= 1, "policy.action_stride must be at least 1");
    require(train.lambda >= 0.0, "train.lambda must be non-negative");
    require(train.delta > 0.0, "train.delta must be positive");
    require(train.batch_size >= 1, "train.batch_size must be at least 1");
    require(train.learning_rate > 0.0, "train.learning_rate must be positive");
    require(eval.level == "small" || eval.level == "large", "eval.level must be small or large");
    require(eval.bootstrap >= 1, "eval.bootstrap must be at least 1");
    require(eval.chunks_per_episode >= 1, "eval.chunks_per_episode must be at least 1");
    for (double d : ablate.deltas) require(d > 0.0, "ablate.deltas must be positive");
    for (double l : ablate.lambdas) require(l > 0.0, "ablate.lambdas must be positive");
    for (std::size_t s : datascale.sizes) require(s >= 1, "datascale.sizes must be positive");
  }

  std::string hash() const {
    auto j = to_json();
    j.erase("out_dir");
    return fnv1a_hex(j.dump());
  }
};

// ---------------------------------------------------------------------------
// Shared helpers

struct Workspace {
  std::filesystem::path out_dir;
  std::size_t jobs = 1;

  std::string path(const std::string& rel) const { return (out_dir / rel).string(); }
};

inline KinematicChain load_chain(const RunConfig& cfg, const Workspace& ws) {
  if (cfg.chain.empty()) return KinematicChain::planar_default();
  try {
    return KinematicChain::from_json(nlohmann::json::parse(read_file(ws.path(cfg.chain))));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("chain file: ") + e.what());
  }
}

inline std::vector<Episode> prefix(const std::vector<Episode>& all, std::size_t n, const char* what) {
  if (n == 0) return all;
  if (n > all.size()) {
    throw UsageError(std::string(what) + ": requested " + std::to_string(n) + " episodes but the dataset has " +
                     std::to_string(all.size()));
  }
  return {all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n)};
}

inline std::string fixed(double v, int digits = 6) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

inline std::string method_name(double lambda) { return lambda == 0.0 ? "MSE" : "MSE+Feasibility"; }

// ---------------------------------------------------------------------------
// Training

struct TrainLogRow {
  std::size_t step = 0;
  StepLosses losses;
};

/// Trains one policy on `episodes` with the given objective weights.
///
/// Seeds: network init, batch selection, and diffusion noise each use their
/// own substream of `train.seed`.
inline Checkpoint train_policy(const RunConfig& cfg, const std::vector<Episode>& episodes, const KinematicChain& chain,
                               double lambda, double delta, std::vector<TrainLogRow>* log = nullptr) {
  if (episodes.empty()) throw UsageError("train: no episodes");
  NetworkShape shape;
  shape.horizon = cfg.policy.horizon;
  shape.dof = chain.dof();
  shape.embed_width = cfg.policy.embed_width;
  shape.hidden = cfg.policy.hidden;
  Checkpoint ck;
  ck.network = PolicyNetwork::create(shape, derive_seed(cfg.train.seed, 1));
  ck.schedule = DiffusionSchedule::linear(cfg.policy.diffusion_steps, cfg.policy.beta_start, cfg.policy.beta_end);
  ck.chain_hash = chain.hash();
  AdamOptimizer adam;
  adam.lr = cfg.train.learning_rate;
  Rng noise(derive_seed(cfg.train.seed, 2));
  Rng pick(derive_seed(cfg.train.seed, 3));
  std::uniform_int_distribution<std::size_t> pick_episode(0, episodes.size() - 1);
  const TrainOptions opt{lambda, delta, true};
  std::vector<TrainSample> batch;
  for (std::size_t step = 1; step <= cfg.train.steps; ++step) {
    batch.clear();
    for (std::size_t b = 0; b < cfg.train.batch_size; ++b) {
      const Episode& ep = episodes[pick_episode(pick)];
      std::uniform_int_distribution<std::size_t> pick_t(0, ep.trajectory.size() - 1);
      batch.push_back(make_sample(ep, pick_t(pick), cfg.policy.horizon, cfg.policy.action_stride));
    }
    const StepLosses losses = train_step(ck.network, batch, ck.schedule, chain, opt, adam, noise);
    if (log != nullptr) log->push_back({step, losses});
  }
  ck.training = {{"lambda", lambda},
                 {"delta", delta},
                 {"steps", cfg.train.steps},
                 {"batch_size", cfg.train.batch_size},
                 {"learning_rate", cfg.train.learning_rate},
                 {"seed", cfg.train.seed},
                 {"episodes", episodes.size()},
                 {"action_stride", cfg.policy.action_stride}};
  return ck;
}

inline std::string train_log_csv(const std::vector<TrainLogRow>& rows) {
  std::ostringstream o;
  o << std::setprecision(17) << "step,l_mse,l_geo,l_total\n";
  for (const auto& r : rows) o << r.step << ',' << r.losses.mse << ',' << r.losses.geo << ',' << r.losses.total << '\n';
  return o.str();
}

// ---------------------------------------------------------------------------
// Evaluation summaries

struct EvalSummary {
  MetricReport metrics;
  std::vector<BootstrapResult> ci;
  std::vector<EvalRecord> records;
};

inline EvalSummary evaluate_policy(const RunConfig& cfg, const Checkpoint& ck, const std::vector<Episode>& base,
                                   const KinematicChain& chain, Level level, std::size_t jobs) {
  ProtocolOptions popt;
  popt.chunks_per_episode = cfg.eval.chunks_per_episode;
  popt.perturbation.epsilon = cfg.data.epsilon;
  EvalSummary s;
  s.records = run_protocol(diffusion_policy(ck.network, ck.schedule), base, chain, level, cfg.eval.seed, popt, jobs);
  s.metrics = compute_metrics(s.records);
  for (std::size_t i = 0; i < s.metrics.pairs.size(); ++i) {
    Rng rng(derive_seed(cfg.eval.seed, 1000 + i));
    s.ci.push_back(clustered_bootstrap_ci(s.records, s.metrics.pairs[i], cfg.eval.bootstrap, rng));
    s.metrics.ci_half_width_pp.push_back(s.ci.back().half_width_pp);
  }
  return s;
}

inline std::string ssr_label(const SsrPair& p) { return "SSR(" + fixed(p.alpha, 2) + "," + fixed(p.beta, 2) + ")"; }

/// Wide row: one cell of a grid report.
struct GridRow {
  std::string method;
  std::size_t data_size = 0;
  double delta = 0.0;
  double lambda = 0.0;
  std::string level;
  EvalSummary summary;
  std::string config_hash;
  std::string dataset_hash;
  std::string checkpoint_hash;
};

inline std::string grid_csv(const std::vector<GridRow>& rows) {
  std::ostringstream o;
  o << "method,data_size,delta,lambda,level,ssr_002_010,ci_002_010_pp,ssr_005_015,ci_005_015_pp,"
       "p_dmin_lt_002,p_dmin_lt_005,p_dtgt_lt_010,p_dtgt_lt_015,degenerate_ci,config_hash,dataset_hash,"
       "checkpoint_hash\n";
  for (const auto& r : rows) {
    const auto& m = r.summary.metrics;
    o << r.method << ',' << r.data_size << ',' << fixed(r.delta, 2) << ',' << fixed(r.lambda, 2) << ',' << r.level
      << ',' << fixed(m.ssr[0]) << ',' << fixed(m.ci_half_width_pp[0], 2) << ',' << fixed(m.ssr[1]) << ','
      << fixed(m.ci_half_width_pp[1], 2) << ',' << fixed(m.p_dmin_lt_002) << ',' << fixed(m.p_dmin_lt_005) << ','
      << fixed(m.p_dtgt_lt_010) << ',' << fixed(m.p_dtgt_lt_015) << ','
      << (r.summary.ci.front().degenerate ? "true" : "false") << ',' << r.config_hash << ',' << r.dataset_hash << ','
      << r.checkpoint_hash << '\n';
  }
  return o.str();
}

inline std::string grid_markdown(const std::string& title, const std::vector<GridRow>& rows) {
  auto pct = [](double v) { return fixed(100.0 * v, 2); };
  std::ostringstream o;
  o << "# " << title << "\n\n";
  o << "| Method | Data | delta | lambda | SSR(0.02,0.10) % | SSR(0.05,0.15) % | Pr(d_min<0.02) % | Pr(d_min<0.05) % "
       "| Pr(d_tgt<0.10) % | Pr(d_tgt<0.15) % | config | dataset |\n";
  o << "|---|---|---|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    const auto& m = r.summary.metrics;
    o << "| " << r.method << " | " << r.data_size << " | " << (r.lambda == 0.0 ? "-" : fixed(r.delta, 2)) << " | "
      << fixed(r.lambda, 1) << " | " << pct(m.ssr[0]) << " ± " << fixed(m.ci_half_width_pp[0], 2) << " | "
      << pct(m.ssr[1]) << " ± " << fixed(m.ci_half_width_pp[1], 2) << " | " << pct(m.p_dmin_lt_002) << " | "
      << pct(m.p_dmin_lt_005) << " | " << pct(m.p_dtgt_lt_010) << " | " << pct(m.p_dtgt_lt_015) << " | `"
      << r.config_hash << "` | `" << r.dataset_hash.substr(0, 12) << "` |\n";
  }
  o << "\nLevel: " << (rows.empty() ? "" : rows.front().level)
    << ". ± values are 95% CI half-widths in percentage points from an episode-clustered bootstrap.\n";
  return o.str();
}

/// Long format: one row per (method, data size, level, metric).
inline std::string eval_csv(const GridRow& r) {
  const auto& m = r.summary.metrics;
  std::ostringstream o;
  o << "method,data_size,level,metric,value,ci_half_width_pp,config_hash,dataset_hash,checkpoint_hash\n";
  auto row = [&](const std::string& metric, double v, const std::string& ci) {
    o << r.method << ',' << r.data_size << ',' << r.level << ',' << metric << ',' << fixed(v) << ',' << ci << ','
      << r.config_hash << ',' << r.dataset_hash << ',' << r.checkpoint_hash << '\n';
  };
  for (std::size_t i = 0; i < m.pairs.size(); ++i) row(ssr_label(m.pairs[i]), m.ssr[i], fixed(m.ci_half_width_pp[i], 2));
  row("Pr(d_min<0.02)", m.p_dmin_lt_002, "");
  row("Pr(d_min<0.05)", m.p_dmin_lt_005, "");
  row("Pr(d_tgt<0.10)", m.p_dtgt_lt_010, "");
  row("Pr(d_tgt<0.15)", m.p_dtgt_lt_015, "");
  return o.str();
}

// ---------------------------------------------------------------------------
// Commands

struct GenResult {
  DatasetStats stats;
  std::string dataset_hash;
};

inline GenResult cmd_gen(const RunConfig& cfg, const Workspace& ws) {
  const KinematicChain chain = load_chain(cfg, ws);
  ScenarioOptions opt;
  opt.epsilon = cfg.data.epsilon;
  const auto episodes = generate_dataset(chain, cfg.data.count, cfg.data.seed, opt, ws.jobs);
  const std::string text = episodes_to_jsonl(episodes);
  write_file(ws.path(cfg.data.path), text);
  GenResult r{dataset_stats(chain, episodes), git_blob_hash(text)};
  write_file(ws.path(cfg.data.path + ".stats.txt"), format_stats(r.stats));
  return r;
}

struct LoadedDataset {
  std::vector<Episode> episodes;
  std::string hash;
};

inline LoadedDataset load_dataset(const RunConfig& cfg, const Workspace& ws, const KinematicChain& chain) {
  const std::string path = ws.path(cfg.data.path);
  if (!std::filesystem::exists(path)) throw UsageError("dataset not found: " + path);
  const std::string text = read_file(path);
  LoadedDataset d{episodes_from_jsonl(text), git_blob_hash(text)};
  if (d.episodes.empty()) throw std::runtime_error("dataset is empty: " + path);
  for (const Episode& ep : d.episodes) {
    if (ep.chain_hash != chain.hash()) throw std::runtime_error("dataset was generated for a different chain");
  }
  return d;
}

struct TrainResult {
  std::string checkpoint_hash;
  StepLosses first;
  StepLosses last;
};

inline TrainResult cmd_train(const RunConfig& cfg, const Workspace& ws) {
  const KinematicChain chain = load_chain(cfg, ws);
  const auto data = load_dataset(cfg, ws, chain);
  const auto episodes = prefix(data.episodes, cfg.train.episodes, "train");
  std::vector<TrainLogRow> log;
  Checkpoint ck = train_policy(cfg, episodes, chain, cfg.train.lambda, cfg.train.delta, &log);
  ck.training["dataset_hash"] = data.hash;
  const std::string text = checkpoint_to_json(ck);
  write_file(ws.path(cfg.train.checkpoint), text);
  write_file(ws.path(cfg.train.log), train_log_csv(log));
  TrainResult r{git_blob_hash(text), {}, {}};
  if (!log.empty()) {
    r.first = log.front().losses;
    r.last = log.back().losses;
  }
  return r;
}

inline GridRow cmd_eval(const RunConfig& cfg, const Workspace& ws) {
  const Level level = parse_level(cfg.eval.level);
  const KinematicChain chain = load_chain(cfg, ws);
  const auto data = load_dataset(cfg, ws, chain);
  const auto base = prefix(data.episodes, cfg.eval.episodes, "eval");
  const std::string ck_path = ws.path(cfg.eval.checkpoint);
  if (!std::filesystem::exists(ck_path)) throw UsageError("checkpoint not found: " + ck_path);
  const std::string ck_text = read_file(ck_path);
  const Checkpoint ck = checkpoint_from_json(ck_text, chain.hash());
  GridRow row;
  row.lambda = ck.training.value("lambda", 0.0);
  row.delta = ck.training.value("delta", 0.0);
  row.method = method_name(row.lambda);
  row.data_size = ck.training.value("episodes", std::size_t{0});
  row.level = cfg.eval.level;
  row.summary = evaluate_policy(cfg, ck, base, chain, level, ws.jobs);
  row.config_hash = cfg.hash();
  row.dataset_hash = data.hash;
  row.checkpoint_hash = git_blob_hash(ck_text);
  write_file(ws.path(cfg.eval.report + ".csv"), eval_csv(row));
  write_file(ws.path(cfg.eval.report + ".md"), grid_markdown("Evaluation", {row}));
  write_file(ws.path(cfg.eval.report + "_records.jsonl"), records_to_jsonl(row.summary.records));
  return row;
}

/// Train-or-load for one grid cell; checkpoints are cached under checkpoints/ by config hash.
inline std::pair<Checkpoint, std::string> cached_checkpoint(const RunConfig& cell, const Workspace& ws,
                                                            const std::vector<Episode>& episodes,
                                                            const KinematicChain& chain, const std::string& dataset_hash) {
  nlohmann::ordered_json key = {{"policy", cell.to_json()["policy"]},
                                {"train", cell.to_json()["train"]},
                                {"episodes", episodes.size()},
                                {"dataset_hash", dataset_hash},
                                {"chain_hash", chain.hash()}};
  key["train"].erase("checkpoint");
  key["train"].erase("log");
  const std::filesystem::path dir = ws.out_dir / "checkpoints";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / (fnv1a_hex(key.dump()) + ".json")).string();
  if (std::filesystem::exists(path)) {
    const std::string text = read_file(path);
    return {checkpoint_from_json(text, chain.hash()), git_blob_hash(text)};
  }
  Checkpoint ck = train_policy(cell, episodes, chain, cell.train.lambda, cell.train.delta);
  ck.training["dataset_hash"] = dataset_hash;
  const std::string text = checkpoint_to_json(ck);
  write_file(path, text);
  return {ck, git_blob_hash(text)};
}

/// Trains and evaluates every cell, possibly in parallel, and returns rows in cell order.
inline std::vector<GridRow> run_grid(const RunConfig& cfg, const Workspace& ws, const std::vector<RunConfig>& cells,
                                     const std::vector<std::size_t>& train_sizes) {
  const Level level = parse_level(cfg.eval.level);
  const KinematicChain chain = load_chain(cfg, ws);
  const auto data = load_dataset(cfg, ws, chain);
  const auto base = prefix(data.episodes, cfg.eval.episodes, "eval");
  for (std::size_t n : train_sizes) prefix(data.episodes, n, "train");
  std::vector<GridRow> rows(cells.size());
  parallel_for(cells.size(), ws.jobs, [&](std::size_t i) {
    const RunConfig& cell = cells[i];
    const auto episodes = prefix(data.episodes, train_sizes[i], "train");
    const auto [ck, ck_hash] = cached_checkpoint(cell, ws, episodes, chain, data.hash);
    GridRow& row = rows[i];
    row.lambda = cell.train.lambda;
    row.delta = cell.train.delta;
    row.method = method_name(row.lambda);
    row.data_size = episodes.size();
    row.level = cfg.eval.level;
    row.summary = evaluate_policy(cell, ck, base, chain, level, 1);
    row.config_hash = cell.hash();
    row.dataset_hash = data.hash;
    row.checkpoint_hash = ck_hash;
  });
  return rows;
}

/// Baseline (lambda = 0) plus every (delta, lambda) cell, large protocol.
inline std::vector<GridRow> cmd_ablate(const RunConfig& cfg, const Workspace& ws) {
  std::vector<RunConfig> cells;
  RunConfig base = cfg;
  base.train.lambda = 0.0;
  cells.push_back(base);
  for (double d : cfg.ablate.deltas) {
    for (double l : cfg.ablate.lambdas) {
      RunConfig c = cfg;
      c.train.delta = d;
      c.train.lambda = l;
      cells.push_back(c);
    }
  }
  const std::vector<std::size_t> sizes(cells.size(), cfg.train.episodes);
  const auto rows = run_grid(cfg, ws, cells, sizes);
  write_file(ws.path(cfg.ablate.report + ".csv"), grid_csv(rows));
  write_file(ws.path(cfg.ablate.report + ".md"), grid_markdown("Supervision strength ablation", rows));
  return rows;
}

/// Both objectives at every training-set size; evaluation base episodes are fixed by eval.episodes.
inline std::vector<GridRow> cmd_datascale(const RunConfig& cfg, const Workspace& ws) {
  std::vector<RunConfig> cells;
  std::vector<std::size_t> sizes;
  for (std::size_t n : cfg.datascale.sizes) {
    for (double l : {0.0, cfg.train.lambda}) {
      RunConfig c = cfg;
      c.train.lambda = l;
      c.train.episodes = n;
      cells.push_back(c);
      sizes.push_back(n);
    }
  }
  const auto rows = run_grid(cfg, ws, cells, sizes);
  write_file(ws.path(cfg.datascale.report + ".csv"), grid_csv(rows));
  write_file(ws.path(cfg.datascale.report + ".md"), grid_markdown("Training data size", rows));
  return rows;
}

}  // namespace fsp
