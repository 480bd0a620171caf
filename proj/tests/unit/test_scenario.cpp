#include <gtest/gtest.h>

#include "fsp/scenario.hpp"

using fsp::JointState;
using fsp::KinematicChain;
using fsp::ObbObstacle;
using fsp::Vec3;

namespace {

JointState q3(double a, double b, double c) { return (JointState(3) << a, b, c).finished(); }

const KinematicChain& chain() {
  static const KinematicChain c = KinematicChain::planar_default();
  return c;
}

}  // namespace

TEST(PlanReference, LinearInterpolation) {
  const auto path = fsp::interpolate_joints(q3(0, 0, 0), q3(1, 0, 0), 5);
  ASSERT_EQ(path.size(), 5u);
  EXPECT_EQ(path[1], q3(0.25, 0, 0));
  EXPECT_EQ(path[4], q3(1, 0, 0));
}

TEST(PlanReference, StartEqualsGoalIsConstant) {
  const JointState q = q3(0.3, -0.2, 0.1);
  for (const auto& w : fsp::interpolate_joints(q, q, 7)) EXPECT_EQ(w, q);
}

TEST(PlanReference, EndpointWithinIkTolerance) {
  const Vec3 target(0.3, 0.5, 0.0);
  const auto path = fsp::plan_reference(chain(), q3(0.2, 0.1, -0.3), target, 80);
  ASSERT_EQ(path.size(), 80u);
  EXPECT_EQ(path.front(), q3(0.2, 0.1, -0.3));
  EXPECT_LE((fsp::end_effector(chain(), path.back()) - target).norm(), 0.005);
}

TEST(PlanReference, UnreachableTargetSignalsResample) {
  EXPECT_THROW(fsp::plan_reference(chain(), q3(0, 0, 0), Vec3(2, 0, 0), 80), fsp::ResampleError);
}

TEST(PlaceObstacle, AcceptedBoxInterferesAndSparesTarget) {
  std::mt19937_64 rng(4);
  int placed = 0;
  for (int s = 0; s < 20; ++s) {
    const Vec3 target(0.1 + 0.03 * s, 0.45 - 0.02 * s, 0.0);
    const auto ref = fsp::plan_reference(chain(), q3(-0.8, 0.5, 0.3), target, 80);
    try {
      const ObbObstacle box = fsp::place_obstacle_counterfactual(chain(), ref, target, 0.10, rng);
      ++placed;
      EXPECT_LT(fsp::min_clearance(chain(), ref, box), 0.10);
      EXPECT_FALSE(fsp::obb_contains(target, box));
      EXPECT_GT(fsp::obb_sdf(target, box), 0.02);
      EXPECT_GT(fsp::min_clearance(chain(), ref.front(), box), 0.10);
      for (int i = 0; i < 3; ++i) {
        EXPECT_GE(box.half_extents[i], 0.03);
        EXPECT_LE(box.half_extents[i], 0.08);
      }
    } catch (const fsp::ResampleError&) {
    }
  }
  EXPECT_GE(placed, 15);
}

TEST(PlaceObstacle, FarBoxIsRejected) {
  const Vec3 target(0.3, 0.5, 0.0);
  const auto ref = fsp::plan_reference(chain(), q3(0, 0, 0), target, 80);
  const auto far = ObbObstacle::from_yaw(Vec3(10, 0, 0), 0.3, Vec3(0.05, 0.05, 0.05));
  EXPECT_FALSE(fsp::accepts_placement(chain(), ref, target, far, 0.10));
}

TEST(PlaceObstacle, DisplacementConstraint) {
  std::mt19937_64 rng(8);
  const Vec3 target(0.2, 0.6, 0.0);
  const auto ref = fsp::plan_reference(chain(), q3(-0.5, 0.4, 0.2), target, 80);
  const Vec3 old(0.5, 0.3, 0.0);
  const ObbObstacle box = fsp::place_obstacle_counterfactual(chain(), ref, target, 0.10, rng, {}, old, 0.15);
  EXPECT_GE((box.center - old).norm(), 0.15);
}

TEST(Replan, FarObstacleGivesStraightLine) {
  std::mt19937_64 rng(1);
  const auto far = ObbObstacle::from_yaw(Vec3(10, 0, 0), 0.0, Vec3(0.05, 0.05, 0.05));
  const JointState a = q3(-0.5, 0.2, 0.1);
  const JointState b = q3(0.7, -0.4, 0.9);
  const auto path = fsp::replan_with_obstacle(chain(), a, b, far, 80, rng);
  const auto line = fsp::interpolate_joints(a, b, 80);
  ASSERT_EQ(path.size(), 80u);
  for (std::size_t i = 0; i < 80; ++i) EXPECT_LE((path[i] - line[i]).norm(), 1e-12);
}

TEST(Replan, AvoidsInterferingObstacle) {
  std::mt19937_64 rng(3);
  const JointState a = q3(-0.6, 0.0, 0.0);
  const JointState b = q3(0.6, 0.0, 0.0);
  // Box near the end-effector arc between the endpoints.
  const auto box = ObbObstacle::from_yaw(Vec3(0.92, 0.0, 0.0), 0.0, Vec3(0.04, 0.04, 0.05));
  ASSERT_LT(fsp::min_clearance(chain(), fsp::interpolate_joints(a, b, 80), box), 0.0);
  const auto path = fsp::replan_with_obstacle(chain(), a, b, box, 80, rng);
  ASSERT_EQ(path.size(), 80u);
  EXPECT_EQ(path.front(), a);
  EXPECT_EQ(path.back(), b);
  EXPECT_GE(fsp::min_clearance(chain(), path, box), 0.01);
}

TEST(Replan, CollidingStartSignalsResample) {
  std::mt19937_64 rng(3);
  const auto box = ObbObstacle::from_yaw(Vec3(0.9, 0.0, 0.0), 0.0, Vec3(0.05, 0.05, 0.05));
  EXPECT_THROW(fsp::replan_with_obstacle(chain(), q3(0, 0, 0), q3(1, 0, 0), box, 80, rng), fsp::ResampleError);
}

TEST(Replan, ResamplePathKeepsEndpointsAndSpacing) {
  std::vector<JointState> raw = {q3(0, 0, 0), q3(1, 0, 0), q3(1, 3, 0)};
  const auto out = fsp::detail::resample_path(raw, 5);
  ASSERT_EQ(out.size(), 5u);
  EXPECT_EQ(out.front(), raw.front());
  EXPECT_EQ(out.back(), raw.back());
  EXPECT_LE((out[1] - q3(1, 0, 0)).norm(), 1e-12);
  EXPECT_LE((out[2] - q3(1, 1, 0)).norm(), 1e-12);
}

TEST(GenerateEpisode, CounterfactualAndEndpointProperties) {
  const fsp::ScenarioOptions opt;
  for (std::size_t i = 0; i < 20; ++i) {
    const auto ep = fsp::generate_episode(chain(), i, fsp::derive_seed(11, i), opt);
    ASSERT_EQ(ep.trajectory.size(), 80u);
    ASSERT_TRUE(ep.provenance.has_value());
    EXPECT_EQ(ep.trajectory.front(), ep.scene.start_joints);
    EXPECT_LT(ep.provenance->reference_min_clearance, 0.10);
    EXPECT_GE(fsp::min_clearance(chain(), ep.trajectory, ep.scene.obstacle), 0.01);
    EXPECT_LE((fsp::end_effector(chain(), ep.trajectory.back()) - ep.scene.target).norm(), 0.005);
    EXPECT_TRUE(chain().within_limits(ep.trajectory.back()));
    EXPECT_EQ(ep.chain_hash, chain().hash());
    EXPECT_EQ(ep.instruction.rfind("Reach the target at (", 0), 0u);
  }
}

TEST(GenerateDataset, DeterministicAcrossRunsAndJobCounts) {
  const auto a = fsp::episodes_to_jsonl(fsp::generate_dataset(chain(), 12, 5, {}, 1));
  const auto b = fsp::episodes_to_jsonl(fsp::generate_dataset(chain(), 12, 5, {}, 1));
  const auto c = fsp::episodes_to_jsonl(fsp::generate_dataset(chain(), 12, 5, {}, 4));
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
  EXPECT_NE(a, fsp::episodes_to_jsonl(fsp::generate_dataset(chain(), 12, 6, {}, 1)));
}

TEST(GenerateDataset, RejectsZeroCount) {
  EXPECT_THROW(fsp::generate_dataset(chain(), 0, 1), std::invalid_argument);
}

TEST(GenerateDataset, FileFormatAndRoundTrip) {
  const auto eps = fsp::generate_dataset(chain(), 3, 21);
  const std::string text = fsp::episodes_to_jsonl(eps);
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  const auto j = nlohmann::ordered_json::parse(line);
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  const std::vector<std::string> expected = {"episode_id", "seed",       "chain_hash",  "start_joints",
                                             "target",     "obstacle",   "trajectory",  "instruction"};
  EXPECT_EQ(keys, expected);
  EXPECT_EQ(j["trajectory"].size(), 80u);
  EXPECT_EQ(j["trajectory"][0].size(), 3u);
  const auto back = fsp::episodes_from_jsonl(text);
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].trajectory, eps[i].trajectory);
    EXPECT_EQ(back[i].scene.target, eps[i].scene.target);
    EXPECT_EQ(back[i].scene.obstacle.center, eps[i].scene.obstacle.center);
    EXPECT_NEAR((back[i].scene.obstacle.rotation - eps[i].scene.obstacle.rotation).norm(), 0.0, 1e-15);
    EXPECT_FALSE(back[i].provenance.has_value());
  }
}

TEST(GenerateDataset, StatsRecheck) {
  const auto eps = fsp::generate_dataset(chain(), 10, 2);
  const auto s = fsp::dataset_stats(chain(), eps);
  EXPECT_EQ(s.episodes, 10u);
  EXPECT_GE(s.d_min_mean, 0.01);
  EXPECT_LE(s.d_tgt_mean, 0.005);
  EXPECT_EQ(s.p_dmin_lt_002 <= s.p_dmin_lt_005, true);
  EXPECT_EQ(s.p_dtgt_lt_010, 1.0);
  const auto text = fsp::format_stats(s);
  EXPECT_NE(text.find("Pr(d_min < 0.05)"), std::string::npos);
}

TEST(DeriveSeed, DistinctStreams) {
  EXPECT_NE(fsp::derive_seed(1, 0), fsp::derive_seed(1, 1));
  EXPECT_NE(fsp::derive_seed(1, 0), fsp::derive_seed(2, 0));
  EXPECT_EQ(fsp::derive_seed(9, 4), fsp::derive_seed(9, 4));
}
