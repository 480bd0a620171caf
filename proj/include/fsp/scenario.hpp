#pragma once

// Counterfactual demonstration generation: obstacle-free reference plan,
// interfering obstacle placement, collision-free replanning.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsp/episode.hpp"
#include "fsp/geometry.hpp"
#include "fsp/kinematics.hpp"
#include "fsp/parallel.hpp"

namespace fsp {

/// A scene or plan could not be produced with the current draw; the caller resamples.
class ResampleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed of substream `index` under `base`.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  return splitmix64(splitmix64(base) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

struct PlannerOptions {
  double margin = 0.01;
  double goal_bias = 0.10;
  double step = 0.10;
  double edge_resolution = 0.02;
  int max_expansions = 5000;
  int shortcut_attempts = 200;
};

struct ScenarioOptions {
  std::size_t steps = 80;
  double epsilon = 0.10;
  /// Minimum clearance of the start configuration.
  double start_clearance = 0.10;
  /// Minimum signed distance from the target point to the obstacle.
  double target_margin = 0.02;
  /// Start joints are uniform in [-start_span, start_span] intersected with the limits.
  double start_span = 1.0;
  double target_radius_min = 0.20;
  double target_radius_max = 0.85;
  double offset_radius = 0.15;
  double half_extent_min = 0.03;
  double half_extent_max = 0.08;
  int placement_attempts = 200;
  int retries = 50;
  /// Random IK restarts used to find alternative goal configurations for replanning.
  int extra_goal_seeds = 12;
  IkOptions ik;
  PlannerOptions planner;
};

// ---------------------------------------------------------------------------
// Reference plan

inline std::vector<JointState> interpolate_joints(const JointState& start, const JointState& goal, std::size_t n) {
  if (n < 2) throw std::invalid_argument("interpolate_joints: need at least two waypoints");
  std::vector<JointState> path;
  path.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double s = static_cast<double>(i) / static_cast<double>(n - 1);
    path.push_back(i + 1 == n ? goal : JointState(start + (goal - start) * s));
  }
  return path;
}

/// Straight joint-space line from the start to an IK goal. Throws ResampleError on IK failure.
inline std::vector<JointState> plan_reference(const KinematicChain& chain, const JointState& start, const Vec3& target,
                                              std::size_t n, const IkOptions& ik = {}) {
  JointState goal;
  try {
    goal = solve_ik(chain, target, start, ik);
  } catch (const UnreachableError& e) {
    throw ResampleError(std::string("reference plan: ") + e.what());
  }
  return interpolate_joints(start, goal, n);
}

// ---------------------------------------------------------------------------
// Obstacle placement

/// Obstacle-independent scene checks: target outside the box, start and goal clear.
inline bool scene_admissible(const KinematicChain& chain, const ObbObstacle& box, const JointState& start,
                             const JointState& goal, const Vec3& target, const ScenarioOptions& opt) {
  return obb_sdf(target, box) > opt.target_margin && min_clearance(chain, start, box) > opt.start_clearance &&
         min_clearance(chain, goal, box) >= opt.planner.margin;
}

/// Counterfactual acceptance test for a candidate box against the reference plan.
inline bool accepts_placement(const KinematicChain& chain, std::span<const JointState> reference, const Vec3& target,
                              const ObbObstacle& box, double epsilon, const ScenarioOptions& opt = {}) {
  return min_clearance(chain, reference, box) < epsilon &&
         scene_admissible(chain, box, reference.front(), reference.back(), target, opt);
}

/// Samples a box that brings π⁻ within `epsilon` of the arm while keeping the scene admissible.
///
/// When `away_from` is set, accepted centers must also lie at least
/// `min_displacement` from it. Throws ResampleError once the attempt budget is spent.
inline ObbObstacle place_obstacle_counterfactual(const KinematicChain& chain, std::span<const JointState> reference,
                                                 const Vec3& target, double epsilon, std::mt19937_64& rng,
                                                 const ScenarioOptions& opt = {},
                                                 const std::optional<Vec3>& away_from = std::nullopt,
                                                 double min_displacement = 0.0) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("place_obstacle: epsilon must be positive");
  if (reference.empty()) throw std::invalid_argument("place_obstacle: empty reference trajectory");
  std::uniform_int_distribution<std::size_t> pick_step(0, reference.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_link(0, chain.representative().size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
  std::uniform_real_distribution<double> half(opt.half_extent_min, opt.half_extent_max);
  for (int attempt = 0; attempt < opt.placement_attempts; ++attempt) {
    const JointState& q = reference[pick_step(rng)];
    const auto points = representative_points(forward_kinematics(chain, q), chain);
    const Vec3 anchor = points[pick_link(rng)].second;
    const double r = opt.offset_radius * std::sqrt(unit(rng));
    const double phi = angle(rng);
    const Vec3 center = anchor + Vec3(r * std::cos(phi), r * std::sin(phi), 0.0);
    const double yaw = angle(rng);
    const Vec3 extents(half(rng), half(rng), half(rng));
    const ObbObstacle box = ObbObstacle::from_yaw(center, yaw, extents);
    if (away_from && (center - *away_from).norm() < min_displacement) continue;
    if (accepts_placement(chain, reference, target, box, epsilon, opt)) return box;
  }
  throw ResampleError("place_obstacle: no interfering placement within " + std::to_string(opt.placement_attempts) +
                      " attempts");
}

// ---------------------------------------------------------------------------
// Replanning

namespace detail {

inline bool config_free(const KinematicChain& chain, const JointState& q, const ObbObstacle& box, double margin) {
  return min_clearance(chain, q, box) >= margin;
}

inline bool edge_free(const KinematicChain& chain, const JointState& a, const JointState& b, const ObbObstacle& box,
                      const PlannerOptions& opt) {
  const double len = (b - a).norm();
  const int pieces = std::max(1, static_cast<int>(std::ceil(len / opt.edge_resolution)));
  for (int i = 1; i <= pieces; ++i) {
    const JointState q = a + (b - a) * (static_cast<double>(i) / pieces);
    if (!config_free(chain, q, box, opt.margin)) return false;
  }
  return true;
}

/// Arc-length resampling of a polyline to `n` points; endpoints kept exactly.
inline std::vector<JointState> resample_path(const std::vector<JointState>& path, std::size_t n) {
  std::vector<double> cum = {0.0};
  for (std::size_t i = 1; i < path.size(); ++i) cum.push_back(cum.back() + (path[i] - path[i - 1]).norm());
  const double total = cum.back();
  if (path.size() == 1 || total == 0.0) return std::vector<JointState>(n, path.front());
  std::vector<JointState> out;
  out.reserve(n);
  std::size_t seg = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i == 0) {
      out.push_back(path.front());
      continue;
    }
    if (i + 1 == n) {
      out.push_back(path.back());
      continue;
    }
    const double s = total * static_cast<double>(i) / static_cast<double>(n - 1);
    while (seg + 2 < path.size() && cum[seg + 1] < s) ++seg;
    const double span = cum[seg + 1] - cum[seg];
    const double u = span > 0.0 ? (s - cum[seg]) / span : 0.0;
    out.push_back(path[seg] + (path[seg + 1] - path[seg]) * u);
  }
  return out;
}

}  // namespace detail

/// Goal-biased joint-space RRT from `start` to any of `goals` around `box`,
/// shortcut and resampled to `n` waypoints.
///
/// Goal samples extend the tree greedily toward the drawn goal until blocked.
/// Expansions count nodes added to the tree.
inline std::vector<JointState> replan_with_obstacle(const KinematicChain& chain, const JointState& start,
                                                    std::span<const JointState> goals, const ObbObstacle& box,
                                                    std::size_t n, std::mt19937_64& rng, const PlannerOptions& opt = {}) {
  if (!detail::config_free(chain, start, box, opt.margin)) throw ResampleError("replan: start configuration in collision");
  std::vector<JointState> free_goals;
  for (const JointState& g : goals) {
    if (detail::config_free(chain, g, box, opt.margin)) free_goals.push_back(g);
  }
  if (free_goals.empty()) throw ResampleError("replan: every goal configuration in collision");
  std::vector<JointState> raw;
  for (const JointState& g : free_goals) {
    if (detail::edge_free(chain, start, g, box, opt)) {
      raw = {start, g};
      break;
    }
  }
  if (raw.empty()) {
    std::vector<JointState> nodes = {start};
    std::vector<std::size_t> parent = {0};
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> pick_goal(0, free_goals.size() - 1);
    const std::size_t dof = chain.dof();
    const std::size_t budget = static_cast<std::size_t>(opt.max_expansions);
    std::optional<std::size_t> reached;
    auto nearest_to = [&](const JointState& q) {
      std::size_t best_i = 0;
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < nodes.size(); ++i) {
        const double d = (nodes[i] - q).squaredNorm();
        if (d < best) {
          best = d;
          best_i = i;
        }
      }
      return best_i;
    };
    // Adds one step from node `from` toward `q`; returns the new node index.
    auto extend = [&](std::size_t from, const JointState& q) -> std::optional<std::size_t> {
      const double dist = (q - nodes[from]).norm();
      if (dist == 0.0) return std::nullopt;
      const JointState next = dist <= opt.step ? q : JointState(nodes[from] + (q - nodes[from]) * (opt.step / dist));
      if (!detail::edge_free(chain, nodes[from], next, box, opt)) return std::nullopt;
      nodes.push_back(next);
      parent.push_back(from);
      return nodes.size() - 1;
    };
    auto try_finish = [&](std::size_t node) {
      for (const JointState& g : free_goals) {
        if ((nodes[node] - g).norm() <= opt.step && detail::edge_free(chain, nodes[node], g, box, opt)) {
          nodes.push_back(g);
          parent.push_back(node);
          reached = nodes.size() - 1;
          return true;
        }
      }
      return false;
    };
    const long max_draws = 50L * opt.max_expansions;
    for (long draw = 0; draw < max_draws && nodes.size() <= budget && !reached; ++draw) {
      if (unit(rng) < opt.goal_bias) {
        const JointState& g = free_goals[pick_goal(rng)];
        std::optional<std::size_t> node = nearest_to(g);
        while (nodes.size() <= budget && (node = extend(*node, g))) {
          if (try_finish(*node)) break;
        }
        continue;
      }
      JointState sample(static_cast<Eigen::Index>(dof));
      for (std::size_t j = 0; j < dof; ++j) {
        const Joint& joint = chain.joints()[j];
        sample[static_cast<Eigen::Index>(j)] = joint.lower + (joint.upper - joint.lower) * unit(rng);
      }
      if (const auto node = extend(nearest_to(sample), sample)) try_finish(*node);
    }
    if (!reached) throw ResampleError("replan: no path within " + std::to_string(opt.max_expansions) + " expansions");
    for (std::size_t i = *reached;; i = parent[i]) {
      raw.push_back(nodes[i]);
      if (i == 0) break;
    }
    std::reverse(raw.begin(), raw.end());
    std::uniform_int_distribution<std::size_t> idx;
    for (int a = 0; a < opt.shortcut_attempts && raw.size() > 2; ++a) {
      idx.param(std::uniform_int_distribution<std::size_t>::param_type(0, raw.size() - 1));
      std::size_t i = idx(rng);
      std::size_t j = idx(rng);
      if (i > j) std::swap(i, j);
      if (j - i < 2) continue;
      if (!detail::edge_free(chain, raw[i], raw[j], box, opt)) continue;
      raw.erase(raw.begin() + static_cast<std::ptrdiff_t>(i + 1), raw.begin() + static_cast<std::ptrdiff_t>(j));
    }
  }
  auto path = detail::resample_path(raw, n);
  for (const JointState& q : path) {
    if (!detail::config_free(chain, q, box, opt.margin)) throw ResampleError("replan: resampled waypoint in collision");
  }
  return path;
}

inline std::vector<JointState> replan_with_obstacle(const KinematicChain& chain, const JointState& start,
                                                    const JointState& goal, const ObbObstacle& box, std::size_t n,
                                                    std::mt19937_64& rng, const PlannerOptions& opt = {}) {
  return replan_with_obstacle(chain, start, std::span<const JointState>(&goal, 1), box, n, rng, opt);
}

/// Distinct IK solutions for `target`: the reference goal first, then solutions
/// from the elbow-flipped start and from `extra` random seeds.
inline std::vector<JointState> goal_candidates(const KinematicChain& chain, const Vec3& target,
                                               const JointState& reference_goal, const JointState& start, int extra,
                                               std::mt19937_64& rng, const IkOptions& ik = {}) {
  std::vector<JointState> seeds;
  JointState flipped = start;
  for (Eigen::Index j = 1; j < flipped.size(); ++j) flipped[j] = -flipped[j];
  seeds.push_back(flipped);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int s = 0; s < extra; ++s) {
    JointState q(static_cast<Eigen::Index>(chain.dof()));
    for (std::size_t j = 0; j < chain.dof(); ++j) {
      const Joint& joint = chain.joints()[j];
      q[static_cast<Eigen::Index>(j)] = joint.lower + (joint.upper - joint.lower) * unit(rng);
    }
    seeds.push_back(q);
  }
  std::vector<JointState> goals = {reference_goal};
  for (const JointState& q0 : seeds) {
    try {
      const JointState g = solve_ik(chain, target, q0, ik);
      const bool distinct = std::all_of(goals.begin(), goals.end(),
                                        [&](const JointState& h) { return (g - h).norm() > 0.1; });
      if (distinct) goals.push_back(g);
    } catch (const UnreachableError&) {
    }
  }
  return goals;
}

// ---------------------------------------------------------------------------
// Episodes and datasets

inline std::string instruction_for(const Vec3& target) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << "Reach the target at (" << target.x() << ", " << target.y()
    << "), avoiding the obstacle";
  return s.str();
}

/// One counterfactual episode from its own seed; retries whole scenes on resample signals.
inline Episode generate_episode(const KinematicChain& chain, std::size_t episode_id, std::uint64_t seed,
                                const ScenarioOptions& opt = {}) {
  std::string last_reason = "no attempts";
  for (int retry = 0; retry < opt.retries; ++retry) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(retry)));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    JointState start(static_cast<Eigen::Index>(chain.dof()));
    for (std::size_t j = 0; j < chain.dof(); ++j) {
      const Joint& joint = chain.joints()[j];
      const double lo = std::max(joint.lower, -opt.start_span);
      const double hi = std::min(joint.upper, opt.start_span);
      start[static_cast<Eigen::Index>(j)] = lo + (hi - lo) * unit(rng);
    }
    const double r2min = opt.target_radius_min * opt.target_radius_min;
    const double r2max = opt.target_radius_max * opt.target_radius_max;
    const double radius = std::sqrt(r2min + (r2max - r2min) * unit(rng));
    const double phi = -std::numbers::pi + 2.0 * std::numbers::pi * unit(rng);
    const Vec3 target = chain.base() + Vec3(radius * std::cos(phi), radius * std::sin(phi), 0.0);
    const std::uint64_t planner_seed = rng();
    try {
      const auto reference = plan_reference(chain, start, target, opt.steps, opt.ik);
      const ObbObstacle box = place_obstacle_counterfactual(chain, reference, target, opt.epsilon, rng, opt);
      std::mt19937_64 planner_rng(planner_seed);
      const auto goals =
          goal_candidates(chain, target, reference.back(), start, opt.extra_goal_seeds, planner_rng, opt.ik);
      auto path = replan_with_obstacle(chain, start, goals, box, opt.steps, planner_rng, opt.planner);
      Episode ep;
      ep.episode_id = episode_id;
      ep.chain_hash = chain.hash();
      ep.scene = {start, target, box, seed};
      ep.trajectory = std::move(path);
      ep.instruction = instruction_for(target);
      ep.provenance = Provenance{opt.epsilon, planner_seed, min_clearance(chain, reference, box)};
      return ep;
    } catch (const ResampleError& e) {
      last_reason = e.what();
    }
  }
  throw GenerationError("episode " + std::to_string(episode_id) + ": " + std::to_string(opt.retries) +
                        " scene resamples exhausted (last: " + last_reason + ")");
}

/// Summary of demonstration clearances and endpoint errors.
struct DatasetStats {
  std::size_t episodes = 0;
  double d_min_mean = 0.0;
  double d_min_std = 0.0;
  double d_tgt_mean = 0.0;
  double d_tgt_std = 0.0;
  double p_dmin_lt_002 = 0.0;
  double p_dmin_lt_005 = 0.0;
  double p_dtgt_lt_010 = 0.0;
  double p_dtgt_lt_015 = 0.0;
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / static_cast<double>(v.size()))};
}

inline double fraction_below(const std::vector<double>& v, double threshold) {
  std::size_t n = 0;
  for (double x : v) n += x < threshold ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(v.size());
}

}  // namespace detail

inline DatasetStats dataset_stats(const KinematicChain& chain, const std::vector<Episode>& episodes) {
  if (episodes.empty()) throw std::invalid_argument("dataset_stats: no episodes");
  std::vector<double> dmin;
  std::vector<double> dtgt;
  for (const Episode& ep : episodes) {
    dmin.push_back(min_clearance(chain, ep.trajectory, ep.scene.obstacle));
    dtgt.push_back((end_effector(chain, ep.trajectory.back()) - ep.scene.target).norm());
  }
  DatasetStats s;
  s.episodes = episodes.size();
  std::tie(s.d_min_mean, s.d_min_std) = detail::mean_std(dmin);
  std::tie(s.d_tgt_mean, s.d_tgt_std) = detail::mean_std(dtgt);
  s.p_dmin_lt_002 = detail::fraction_below(dmin, 0.02);
  s.p_dmin_lt_005 = detail::fraction_below(dmin, 0.05);
  s.p_dtgt_lt_010 = detail::fraction_below(dtgt, 0.10);
  s.p_dtgt_lt_015 = detail::fraction_below(dtgt, 0.15);
  return s;
}

inline std::string format_stats(const DatasetStats& s) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(4);
  o << "Total episodes        " << s.episodes << "\n";
  o << "d_min mean (std) [m]  " << s.d_min_mean << " (" << s.d_min_std << ")\n";
  o << "d_tgt mean (std) [m]  " << s.d_tgt_mean << " (" << s.d_tgt_std << ")\n";
  o << "Pr(d_min < 0.02)      " << s.p_dmin_lt_002 << "\n";
  o << "Pr(d_min < 0.05)      " << s.p_dmin_lt_005 << "\n";
  o << "Pr(d_tgt < 0.10)      " << s.p_dtgt_lt_010 << "\n";
  o << "Pr(d_tgt < 0.15)      " << s.p_dtgt_lt_015 << "\n";
  return o.str();
}

/// Episodes 0..count-1, episode i seeded by derive_seed(seed, i). Ordered by index.
inline std::vector<Episode> generate_dataset(const KinematicChain& chain, std::size_t count, std::uint64_t seed,
                                             const ScenarioOptions& opt = {}, std::size_t jobs = 1) {
  if (count == 0) throw std::invalid_argument("generate_dataset: count must be at least 1");
  std::vector<Episode> out(count);
  parallel_for(count, jobs, [&](std::size_t i) { out[i] = generate_episode(chain, i, derive_seed(seed, i), opt); });
  return out;
}

}  // namespace fsp
