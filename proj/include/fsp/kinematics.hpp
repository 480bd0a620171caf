#pragma once

// Serial revolute chains: forward kinematics (plain and differentiable),
// representative clearance points, and numerical inverse kinematics.
//
// Frame convention: frame_0 = Trans(base); frame_i = frame_{i-1} *
// Rot(axis_i, q_i) * Trans(origin_offset_i). The origin of frame_i is the far
// end of link i, so the last frame is the end effector.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fsp/autodiff.hpp"
#include "fsp/field.hpp"
#include "fsp/geometry.hpp"
#include "fsp/hashing.hpp"

namespace fsp {

using Mat4 = Eigen::Matrix4d;
using JointState = Eigen::VectorXd;

class KinematicsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class UnreachableError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Joint {
  std::string link_name;
  Vec3 axis = Vec3::UnitZ();
  Vec3 origin_offset = Vec3::Zero();
  double lower = -3.0;
  double upper = 3.0;
};

/// Member of the representative set: a link frame origin with a body radius.
struct ClearancePoint {
  std::size_t link = 0;
  double radius = 0.0;
};

class KinematicChain {
 public:
  KinematicChain(std::vector<Joint> joints, std::vector<ClearancePoint> representative, Vec3 base = Vec3::Zero())
      : joints_(std::move(joints)), representative_(std::move(representative)), base_(std::move(base)) {
    if (joints_.empty()) throw KinematicsError("chain: at least one joint required");
    for (Joint& j : joints_) {
      if (std::fabs(j.axis.norm() - 1.0) > 1e-9) throw KinematicsError("chain: joint axis of " + j.link_name + " is not unit");
      if (!(j.lower < j.upper)) throw KinematicsError("chain: joint limits of " + j.link_name + " need min < max");
    }
    if (representative_.empty()) throw KinematicsError("chain: representative set is empty");
    for (const ClearancePoint& c : representative_) {
      if (c.link >= joints_.size()) throw KinematicsError("chain: representative link id out of range");
      if (!(c.radius > 0.0)) throw KinematicsError("chain: representative radius must be positive");
    }
  }

  /// Planar three-link arm, lengths 0.4/0.3/0.2 m, limits +-3 rad, radius 0.03 m at every link end.
  static KinematicChain planar_default() {
    std::vector<Joint> joints = {
        {"link1_end", Vec3::UnitZ(), Vec3(0.4, 0, 0), -3.0, 3.0},
        {"link2_end", Vec3::UnitZ(), Vec3(0.3, 0, 0), -3.0, 3.0},
        {"end_effector", Vec3::UnitZ(), Vec3(0.2, 0, 0), -3.0, 3.0},
    };
    return KinematicChain(std::move(joints), {{0, 0.03}, {1, 0.03}, {2, 0.03}});
  }

  std::size_t dof() const { return joints_.size(); }
  const std::vector<Joint>& joints() const { return joints_; }
  const std::vector<ClearancePoint>& representative() const { return representative_; }
  const Vec3& base() const { return base_; }

  double reach() const {
    double r = 0.0;
    for (const Joint& j : joints_) r += j.origin_offset.norm();
    return r;
  }

  JointState clamp(JointState q) const {
    for (std::size_t i = 0; i < dof(); ++i) q[i] = std::clamp(q[i], joints_[i].lower, joints_[i].upper);
    return q;
  }

  bool within_limits(const JointState& q) const {
    for (std::size_t i = 0; i < dof(); ++i) {
      if (q[i] < joints_[i].lower || q[i] > joints_[i].upper) return false;
    }
    return true;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["base"] = {base_[0], base_[1], base_[2]};
    j["joints"] = nlohmann::ordered_json::array();
    for (const Joint& jt : joints_) {
      j["joints"].push_back({{"link", jt.link_name},
                             {"axis", {jt.axis[0], jt.axis[1], jt.axis[2]}},
                             {"origin_offset", {jt.origin_offset[0], jt.origin_offset[1], jt.origin_offset[2]}},
                             {"limits", {jt.lower, jt.upper}}});
    }
    j["representative"] = nlohmann::ordered_json::array();
    for (const ClearancePoint& c : representative_) {
      j["representative"].push_back({{"link", joints_[c.link].link_name}, {"radius", c.radius}});
    }
    return j;
  }

  static KinematicChain from_json(const nlohmann::json& j) {
    auto vec3 = [](const nlohmann::json& a) {
      if (!a.is_array() || a.size() != 3) throw KinematicsError("chain config: expected a 3-vector");
      return Vec3(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
    };
    std::vector<Joint> joints;
    for (const auto& jt : j.at("joints")) {
      Joint joint;
      joint.link_name = jt.at("link").get<std::string>();
      joint.axis = vec3(jt.at("axis"));
      joint.origin_offset = vec3(jt.at("origin_offset"));
      const auto& lim = jt.at("limits");
      joint.lower = lim.at(0).get<double>();
      joint.upper = lim.at(1).get<double>();
      joints.push_back(std::move(joint));
    }
    std::vector<ClearancePoint> rep;
    for (const auto& r : j.at("representative")) {
      const std::string name = r.at("link").get<std::string>();
      auto it = std::find_if(joints.begin(), joints.end(), [&](const Joint& jt) { return jt.link_name == name; });
      if (it == joints.end()) throw KinematicsError("chain config: unknown representative link " + name);
      rep.push_back({static_cast<std::size_t>(it - joints.begin()), r.at("radius").get<double>()});
    }
    Vec3 base = j.contains("base") ? vec3(j.at("base")) : Vec3::Zero();
    return KinematicChain(std::move(joints), std::move(rep), base);
  }

  /// Stable identifier of the chain definition.
  std::string hash() const { return fnv1a_hex(to_json().dump()); }

 private:
  std::vector<Joint> joints_;
  std::vector<ClearancePoint> representative_;
  Vec3 base_;
};

/// World-frame pose of every link frame, in joint order.
using LinkPoses = std::vector<Mat4>;

inline LinkPoses forward_kinematics(const KinematicChain& chain, const JointState& q) {
  if (static_cast<std::size_t>(q.size()) != chain.dof()) {
    throw KinematicsError("forward_kinematics: expected " + std::to_string(chain.dof()) + " joints, got " +
                          std::to_string(q.size()));
  }
  LinkPoses poses;
  poses.reserve(chain.dof());
  Mat4 frame = Mat4::Identity();
  frame.block<3, 1>(0, 3) = chain.base();
  for (std::size_t i = 0; i < chain.dof(); ++i) {
    const Joint& j = chain.joints()[i];
    Mat4 step = Mat4::Identity();
    step.block<3, 3>(0, 0) = Eigen::AngleAxisd(q[i], j.axis).toRotationMatrix();
    step.block<3, 1>(0, 3) = step.block<3, 3>(0, 0) * j.origin_offset;
    frame = frame * step;
    poses.push_back(frame);
  }
  return poses;
}

inline std::vector<std::pair<std::size_t, Vec3>> representative_points(const LinkPoses& poses,
                                                                       const KinematicChain& chain) {
  std::vector<std::pair<std::size_t, Vec3>> pts;
  pts.reserve(chain.representative().size());
  for (const ClearancePoint& c : chain.representative()) {
    pts.emplace_back(c.link, poses.at(c.link).block<3, 1>(0, 3));
  }
  return pts;
}

inline Vec3 end_effector(const KinematicChain& chain, const JointState& q) {
  return forward_kinematics(chain, q).back().block<3, 1>(0, 3);
}

/// Minimum surface clearance over the representative set at one configuration.
inline double min_clearance(const KinematicChain& chain, const JointState& q, const ObbObstacle& box) {
  double best = std::numeric_limits<double>::infinity();
  const LinkPoses poses = forward_kinematics(chain, q);
  for (const ClearancePoint& c : chain.representative()) {
    best = std::min(best, surface_clearance(poses[c.link].block<3, 1>(0, 3), c.radius, box));
  }
  return best;
}

inline double min_clearance(const KinematicChain& chain, std::span<const JointState> path, const ObbObstacle& box) {
  double best = std::numeric_limits<double>::infinity();
  for (const JointState& q : path) best = std::min(best, min_clearance(chain, q, box));
  return best;
}

namespace ad_kinematics {

using ad::Field;
using ad::Tape;
using ad::Tensor;

using Point = std::array<Field, 3>;

/// Differentiable frame origins for a batch of configurations.
/// `joints[i]` holds joint i across all elements; returns one origin per link frame.
inline std::vector<Point> frame_origins(const KinematicChain& chain, std::span<const Field> joints) {
  if (joints.size() != chain.dof()) {
    throw KinematicsError("forward_kinematics: expected " + std::to_string(chain.dof()) + " joint columns, got " +
                          std::to_string(joints.size()));
  }
  std::array<std::array<Field, 3>, 3> rot;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) rot[r][c] = r == c ? 1.0 : 0.0;
  }
  Point pos = {chain.base()[0], chain.base()[1], chain.base()[2]};
  std::vector<Point> origins;
  for (std::size_t i = 0; i < chain.dof(); ++i) {
    const Joint& j = chain.joints()[i];
    Mat3 k;
    k << 0, -j.axis[2], j.axis[1], j.axis[2], 0, -j.axis[0], -j.axis[1], j.axis[0], 0;
    const Mat3 k2 = k * k;
    const Field q = joints[i];
    Field s;
    Field omc;
    if (q.is_constant()) {
      s = std::sin(q.constant());
      omc = 1.0 - std::cos(q.constant());
    } else {
      s = ad::sin(q.tensor());
      omc = ad::add_scalar(ad::neg(ad::cos(q.tensor())), 1.0);
    }
    // Rodrigues: R = I + sin(q) K + (1 - cos(q)) K^2
    std::array<std::array<Field, 3>, 3> step;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) step[r][c] = Field(r == c ? 1.0 : 0.0) + Field(k(r, c)) * s + Field(k2(r, c)) * omc;
    }
    std::array<std::array<Field, 3>, 3> next;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) next[r][c] = rot[r][0] * step[0][c] + rot[r][1] * step[1][c] + rot[r][2] * step[2][c];
    }
    rot = next;
    for (int r = 0; r < 3; ++r) {
      pos[r] = pos[r] + rot[r][0] * j.origin_offset[0] + rot[r][1] * j.origin_offset[1] + rot[r][2] * j.origin_offset[2];
    }
    origins.push_back(pos);
  }
  return origins;
}

}  // namespace ad_kinematics

struct IkOptions {
  double tol = 0.005;
  int max_iters = 500;
};

/// Adaptive-step gradient descent on the squared end-effector error.
///
/// Steps that fail to decrease the error are retried at half length; accepted
/// steps grow the length by 1.5x. Joint limits are enforced by clamping and
/// gradient components pointing into an active limit are dropped. When the
/// gradient vanishes, the step collapses, or the error fails to drop by a fifth over a
/// window of iterations, descent restarts from a deterministic pseudo-random
/// configuration. Iterations across restarts share
/// the `max_iters` budget.
inline JointState solve_ik(const KinematicChain& chain, const Vec3& target, const JointState& q0,
                           const IkOptions& opt = {}) {
  if (static_cast<std::size_t>(q0.size()) != chain.dof()) throw KinematicsError("solve_ik: q0 has wrong length");
  if ((target - chain.base()).norm() > chain.reach() + opt.tol) {
    throw UnreachableError("solve_ik: target lies outside the reachable workspace");
  }
  const std::size_t n = chain.dof();
  auto evaluate = [&](const JointState& q, JointState* grad) {
    ad::Tape tape;
    ad::Tensor qt = tape.variable({n}, std::vector<double>(q.data(), q.data() + n));
    std::vector<ad::Field> cols;
    for (std::size_t i = 0; i < n; ++i) cols.emplace_back(ad::slice(qt, 0, i, i + 1));
    const auto ee = ad_kinematics::frame_origins(chain, cols).back();
    ad::Tensor err = ad::sum(ad::square((ee[0] - target[0]).materialize(tape, 1))) +
                     ad::sum(ad::square((ee[1] - target[1]).materialize(tape, 1))) +
                     ad::sum(ad::square((ee[2] - target[2]).materialize(tape, 1)));
    if (grad) {
      tape.backward(err);
      *grad = Eigen::Map<const JointState>(qt.grad().data(), static_cast<Eigen::Index>(n));
    }
    return err.item();
  };

  std::mt19937_64 restarts(0x5eedULL);
  JointState q = chain.clamp(q0);
  JointState grad(n);
  double f = evaluate(q, &grad);
  double step = 1.0;
  const double tol2 = opt.tol * opt.tol;
  // Components pushing into an active joint limit are dropped.
  auto project = [&](JointState g) {
    for (std::size_t i = 0; i < n; ++i) {
      if ((q[i] <= chain.joints()[i].lower && g[i] > 0.0) || (q[i] >= chain.joints()[i].upper && g[i] < 0.0)) g[i] = 0.0;
    }
    return g;
  };
  constexpr int kWindow = 60;
  double window_start = f;
  int window_iters = 0;
  for (int it = 0; it < opt.max_iters && f > tol2; ++it) {
    const JointState g = project(grad);
    const bool stalled = window_iters >= kWindow && f > 0.8 * window_start;
    if (g.norm() < 1e-12 || step < 1e-12 || stalled) {
      for (std::size_t i = 0; i < n; ++i) {
        std::uniform_real_distribution<double> u(chain.joints()[i].lower, chain.joints()[i].upper);
        q[i] = u(restarts);
      }
      f = evaluate(q, &grad);
      step = 1.0;
      window_start = f;
      window_iters = 0;
      continue;
    }
    if (window_iters >= kWindow) {
      window_start = f;
      window_iters = 0;
    }
    ++window_iters;
    JointState trial = chain.clamp(q - step * g);
    JointState trial_grad(n);
    const double ft = evaluate(trial, &trial_grad);
    if (ft < f) {
      q = trial;
      f = ft;
      grad = trial_grad;
      step *= 1.5;
    } else {
      step *= 0.5;
    }
  }
  if (f > tol2) throw UnreachableError("solve_ik: no convergence within the iteration budget");
  return q;
}

}  // namespace fsp
