#pragma once

// Scene and episode records plus their JSON Lines encoding.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fsp/geometry.hpp"
#include "fsp/kinematics.hpp"

namespace fsp {

struct Scene {
  JointState start_joints;
  Vec3 target = Vec3::Zero();
  ObbObstacle obstacle;
  std::uint64_t seed = 0;
};

/// How an episode was produced. Kept in memory only; not part of the dataset file.
struct Provenance {
  double epsilon = 0.0;
  std::uint64_t planner_seed = 0;
  double reference_min_clearance = 0.0;
};

struct Episode {
  std::size_t episode_id = 0;
  std::string chain_hash;
  Scene scene;
  std::vector<JointState> trajectory;
  std::string instruction;
  std::optional<Provenance> provenance;
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline nlohmann::ordered_json to_array(const Eigen::VectorXd& v) {
  nlohmann::ordered_json a = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Eigen::VectorXd from_array(const nlohmann::json& a, std::size_t expected, const char* what) {
  if (!a.is_array() || (expected != 0 && a.size() != expected)) {
    throw DatasetError(std::string("dataset: bad length for ") + what);
  }
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  return v;
}

}  // namespace detail

inline nlohmann::ordered_json episode_to_json(const Episode& ep) {
  nlohmann::ordered_json j;
  j["episode_id"] = ep.episode_id;
  j["seed"] = ep.scene.seed;
  j["chain_hash"] = ep.chain_hash;
  j["start_joints"] = detail::to_array(ep.scene.start_joints);
  j["target"] = detail::to_array(ep.scene.target);
  j["obstacle"] = {{"center", detail::to_array(ep.scene.obstacle.center)},
                   {"yaw", ep.scene.obstacle.yaw()},
                   {"half_extents", detail::to_array(ep.scene.obstacle.half_extents)}};
  nlohmann::ordered_json traj = nlohmann::ordered_json::array();
  for (const JointState& q : ep.trajectory) traj.push_back(detail::to_array(q));
  j["trajectory"] = std::move(traj);
  j["instruction"] = ep.instruction;
  return j;
}

inline Episode episode_from_json(const nlohmann::json& j) {
  Episode ep;
  ep.episode_id = j.at("episode_id").get<std::size_t>();
  ep.scene.seed = j.at("seed").get<std::uint64_t>();
  ep.chain_hash = j.at("chain_hash").get<std::string>();
  ep.scene.start_joints = detail::from_array(j.at("start_joints"), 0, "start_joints");
  ep.scene.target = detail::from_array(j.at("target"), 3, "target");
  const auto& ob = j.at("obstacle");
  ep.scene.obstacle = ObbObstacle::from_yaw(detail::from_array(ob.at("center"), 3, "obstacle.center"),
                                            ob.at("yaw").get<double>(),
                                            detail::from_array(ob.at("half_extents"), 3, "obstacle.half_extents"));
  const std::size_t dof = static_cast<std::size_t>(ep.scene.start_joints.size());
  for (const auto& row : j.at("trajectory")) ep.trajectory.push_back(detail::from_array(row, dof, "trajectory row"));
  ep.instruction = j.at("instruction").get<std::string>();
  return ep;
}

inline std::string episodes_to_jsonl(const std::vector<Episode>& episodes) {
  std::string out;
  for (const Episode& ep : episodes) {
    out += episode_to_json(ep).dump();
    out += '\n';
  }
  return out;
}

inline std::vector<Episode> episodes_from_jsonl(const std::string& text) {
  std::vector<Episode> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(episode_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DatasetError("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace fsp
