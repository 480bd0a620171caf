#pragma once

// Closed-loop rollouts, safety/accuracy metrics, obstacle perturbations, and
// clustered bootstrap intervals.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsp/episode.hpp"
#include "fsp/parallel.hpp"
#include "fsp/policy.hpp"
#include "fsp/scenario.hpp"

namespace fsp {

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PerturbationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EvalRecord {
  std::size_t episode_id = 0;
  std::size_t perturbation_id = 0;
  std::size_t rollout_id = 0;
  double d_min = 0.0;
  double d_tgt = 0.0;
  std::size_t executed_steps = 0;
  bool collided = false;
};

// ---------------------------------------------------------------------------
// Rollouts

/// Anything that maps a condition to an action chunk, drawing randomness from `rng`.
using ChunkPolicy = std::function<ActionChunk(const ConditionVector&, Rng&)>;

inline ChunkPolicy diffusion_policy(const PolicyNetwork& net, const DiffusionSchedule& schedule) {
  return [&net, &schedule](const ConditionVector& cond, Rng& rng) { return sample_chunk(net, cond, schedule, rng); };
}

/// Executes `chunks` chunks open-loop within each chunk, reconditioning between chunks.
///
/// Joints jump to each commanded row (clamped to limits). d_min is taken over
/// every executed step and every representative point; the start configuration
/// is not an executed step.
inline EvalRecord rollout(const ChunkPolicy& policy, const Scene& scene, const KinematicChain& chain, std::size_t chunks,
                          Rng& rng) {
  JointState q = scene.start_joints;
  EvalRecord rec;
  rec.d_min = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < chunks; ++c) {
    const ActionChunk chunk = policy(ConditionVector::from_scene(scene, q), rng);
    if (static_cast<std::size_t>(chunk.cols()) != chain.dof()) throw EvaluationError("rollout: chunk width != DOF");
    for (Eigen::Index t = 0; t < chunk.rows(); ++t) {
      q = chain.clamp(chunk.row(t).transpose());
      rec.d_min = std::min(rec.d_min, min_clearance(chain, q, scene.obstacle));
      ++rec.executed_steps;
    }
  }
  rec.d_tgt = (end_effector(chain, q) - scene.target).norm();
  rec.collided = rec.d_min < 0.0;
  return rec;
}

// ---------------------------------------------------------------------------
// Metrics

struct SsrPair {
  double alpha = 0.0;
  double beta = 0.0;
};

inline const std::vector<SsrPair>& default_ssr_pairs() {
  static const std::vector<SsrPair> pairs = {{0.02, 0.10}, {0.05, 0.15}};
  return pairs;
}

inline bool safe_success(const EvalRecord& r, const SsrPair& p) { return r.d_min > p.alpha && r.d_tgt < p.beta; }

inline double ssr(const std::vector<EvalRecord>& records, const SsrPair& p) {
  if (records.empty()) throw EvaluationError("metrics: no records");
  std::size_t n = 0;
  for (const EvalRecord& r : records) n += safe_success(r, p) ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(records.size());
}

struct MetricReport {
  std::vector<SsrPair> pairs;
  std::vector<double> ssr;
  std::vector<double> ci_half_width_pp;  // filled by the caller when bootstrapped
  double p_dmin_lt_002 = 0.0;
  double p_dmin_lt_005 = 0.0;
  double p_dtgt_lt_010 = 0.0;
  double p_dtgt_lt_015 = 0.0;
  std::size_t records = 0;
};

inline MetricReport compute_metrics(const std::vector<EvalRecord>& records,
                                    const std::vector<SsrPair>& pairs = default_ssr_pairs()) {
  if (records.empty()) throw EvaluationError("metrics: no records");
  MetricReport m;
  m.pairs = pairs;
  m.records = records.size();
  for (const SsrPair& p : pairs) m.ssr.push_back(ssr(records, p));
  const double n = static_cast<double>(records.size());
  auto frac = [&](auto&& pred) {
    return static_cast<double>(std::count_if(records.begin(), records.end(), pred)) / n;
  };
  m.p_dmin_lt_002 = frac([](const EvalRecord& r) { return r.d_min < 0.02; });
  m.p_dmin_lt_005 = frac([](const EvalRecord& r) { return r.d_min < 0.05; });
  m.p_dtgt_lt_010 = frac([](const EvalRecord& r) { return r.d_tgt < 0.10; });
  m.p_dtgt_lt_015 = frac([](const EvalRecord& r) { return r.d_tgt < 0.15; });
  return m;
}

// ---------------------------------------------------------------------------
// Clustered bootstrap

struct BootstrapResult {
  double half_width_pp = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double replicate_mean = 0.0;
  /// Only one episode: every replicate equals the point estimate.
  bool degenerate = false;
};

/// Percentile with linear interpolation between order statistics at position q * (n - 1).
inline double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw EvaluationError("percentile: no values");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (values[hi] - values[lo]) * (pos - static_cast<double>(lo));
}

/// Resamples episodes with replacement; each replicate pools all records of the drawn episodes.
///
/// Episodes are ordered by id, and replicate b draws its episodes with
/// uniform_int_distribution over that order from `rng`.
inline BootstrapResult clustered_bootstrap_ci(const std::vector<EvalRecord>& records, const SsrPair& pair,
                                              std::size_t replicates, Rng& rng) {
  if (records.empty()) throw EvaluationError("bootstrap: no records");
  if (replicates < 1) throw EvaluationError("bootstrap: need at least one replicate");
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> clusters;  // id -> (successes, records)
  for (const EvalRecord& r : records) {
    auto& c = clusters[r.episode_id];
    c.first += safe_success(r, pair) ? 1 : 0;
    c.second += 1;
  }
  std::vector<std::pair<std::size_t, std::size_t>> counts;
  for (const auto& [id, c] : clusters) counts.push_back(c);
  std::uniform_int_distribution<std::size_t> draw(0, counts.size() - 1);
  std::vector<double> values(replicates);
  double total = 0.0;
  for (std::size_t b = 0; b < replicates; ++b) {
    std::size_t hits = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      const auto& c = counts[draw(rng)];
      hits += c.first;
      n += c.second;
    }
    values[b] = static_cast<double>(hits) / static_cast<double>(n);
    total += values[b];
  }
  BootstrapResult out;
  out.lower = percentile(values, 0.025);
  out.upper = percentile(values, 0.975);
  out.half_width_pp = 100.0 * (out.upper - out.lower) / 2.0;
  out.replicate_mean = total / static_cast<double>(replicates);
  out.degenerate = counts.size() == 1;
  return out;
}

// ---------------------------------------------------------------------------
// Perturbations

struct PerturbationOptions {
  double max_shift = 0.10;
  double scale_min = 0.9;
  double scale_max = 1.1;
  int small_attempts = 100;
  double min_displacement = 0.15;
  int large_attempts = 1000;
  double epsilon = 0.10;
  ScenarioOptions scenario;
};

/// Scene-level checks that perturbations must preserve.
inline bool scene_valid(const KinematicChain& chain, const Scene& s, const ScenarioOptions& opt) {
  return obb_sdf(s.target, s.obstacle) > opt.target_margin &&
         min_clearance(chain, s.start_joints, s.obstacle) > opt.start_clearance;
}

/// Local xy shift of the obstacle by at most `max_shift` and per-axis size scaling.
inline Scene perturb_small(const Scene& scene, const KinematicChain& chain, Rng& rng,
                           const PerturbationOptions& opt = {}) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
  std::uniform_real_distribution<double> scale(opt.scale_min, opt.scale_max);
  for (int attempt = 0; attempt < opt.small_attempts; ++attempt) {
    const double mag = opt.max_shift * unit(rng);
    const double dir = angle(rng);
    Scene out = scene;
    out.obstacle.center += Vec3(mag * std::cos(dir), mag * std::sin(dir), 0.0);
    for (int i = 0; i < 3; ++i) out.obstacle.half_extents[i] *= scale(rng);
    if (scene_valid(chain, out, opt.scenario)) return out;
  }
  throw PerturbationError("perturb_small: " + std::to_string(opt.small_attempts) + " rejections");
}

/// Relocates the obstacle at least `min_displacement` away while still interfering with the demonstration.
inline Scene perturb_large(const Scene& scene, std::span<const JointState> demo, const KinematicChain& chain, Rng& rng,
                           const PerturbationOptions& opt = {}) {
  ScenarioOptions placement = opt.scenario;
  placement.placement_attempts = opt.large_attempts;
  Scene out = scene;
  try {
    out.obstacle = place_obstacle_counterfactual(chain, demo, scene.target, opt.epsilon, rng, placement,
                                                 scene.obstacle.center, opt.min_displacement);
  } catch (const ResampleError& e) {
    throw PerturbationError(std::string("perturb_large: ") + e.what());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Protocols

enum class Level { kSmall, kLarge };

inline std::string to_string(Level level) { return level == Level::kSmall ? "small" : "large"; }

inline Level parse_level(const std::string& s) {
  if (s == "small") return Level::kSmall;
  if (s == "large") return Level::kLarge;
  throw std::invalid_argument("unknown level '" + s + "' (expected small or large)");
}

struct ProtocolOptions {
  std::size_t chunks_per_episode = 3;
  std::size_t small_perturbations = 5;
  std::size_t small_rollouts = 1;
  std::size_t large_perturbations = 2;
  std::size_t large_rollouts = 5;
  PerturbationOptions perturbation;
};

/// Seed for (episode, perturbation, rollout); rollout index `kPerturbationStream` seeds the perturbation itself.
inline std::uint64_t protocol_seed(std::uint64_t seed, std::size_t episode, std::size_t perturbation,
                                   std::uint64_t rollout) {
  return derive_seed(derive_seed(derive_seed(seed, episode), perturbation), rollout);
}

inline constexpr std::uint64_t kPerturbationStream = 0xffffffffULL;

/// Records ordered by (episode, perturbation[, rollout]). Large-level rollouts
/// are averaged in d_min and d_tgt into one record per perturbation.
inline std::vector<EvalRecord> run_protocol(const ChunkPolicy& policy, const std::vector<Episode>& episodes,
                                            const KinematicChain& chain, Level level, std::uint64_t seed,
                                            const ProtocolOptions& opt = {}, std::size_t jobs = 1) {
  const bool small = level == Level::kSmall;
  const std::size_t perturbations = small ? opt.small_perturbations : opt.large_perturbations;
  const std::size_t rollouts = small ? opt.small_rollouts : opt.large_rollouts;
  if (perturbations == 0 || rollouts == 0) throw EvaluationError("protocol: counts must be positive");
  std::vector<std::vector<EvalRecord>> per_episode(episodes.size());
  parallel_for(episodes.size(), jobs, [&](std::size_t e) {
    const Episode& ep = episodes[e];
    std::vector<EvalRecord>& out = per_episode[e];
    for (std::size_t p = 0; p < perturbations; ++p) {
      Rng prng(protocol_seed(seed, ep.episode_id, p, kPerturbationStream));
      const Scene scene = small ? perturb_small(ep.scene, chain, prng, opt.perturbation)
                                : perturb_large(ep.scene, ep.trajectory, chain, prng, opt.perturbation);
      std::vector<EvalRecord> runs;
      for (std::size_t r = 0; r < rollouts; ++r) {
        Rng rng(protocol_seed(seed, ep.episode_id, p, r));
        EvalRecord rec = rollout(policy, scene, chain, opt.chunks_per_episode, rng);
        rec.episode_id = ep.episode_id;
        rec.perturbation_id = p;
        rec.rollout_id = r;
        runs.push_back(rec);
      }
      if (small) {
        out.insert(out.end(), runs.begin(), runs.end());
        continue;
      }
      EvalRecord avg = runs.front();
      avg.rollout_id = 0;
      avg.d_min = 0.0;
      avg.d_tgt = 0.0;
      for (const EvalRecord& r : runs) {
        avg.d_min += r.d_min;
        avg.d_tgt += r.d_tgt;
      }
      avg.d_min /= static_cast<double>(runs.size());
      avg.d_tgt /= static_cast<double>(runs.size());
      avg.collided = avg.d_min < 0.0;
      out.push_back(avg);
    }
  });
  std::vector<EvalRecord> records;
  for (auto& v : per_episode) records.insert(records.end(), v.begin(), v.end());
  return records;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::ordered_json record_to_json(const EvalRecord& r) {
  nlohmann::ordered_json j;
  j["episode_id"] = r.episode_id;
  j["perturbation_id"] = r.perturbation_id;
  j["rollout_id"] = r.rollout_id;
  j["d_min"] = r.d_min;
  j["d_tgt"] = r.d_tgt;
  j["executed_steps"] = r.executed_steps;
  j["collided"] = r.collided;
  return j;
}

inline std::string records_to_jsonl(const std::vector<EvalRecord>& records) {
  std::string out;
  for (const EvalRecord& r : records) {
    out += record_to_json(r).dump();
    out += '\n';
  }
  return out;
}

}  // namespace fsp
