#include <gtest/gtest.h>

#include <cstring>
#include <random>

#include "fsp/policy.hpp"
#include "support/oracles.hpp"

namespace ad = fsp::ad;
using fsp::ActionChunk;
using fsp::DiffusionSchedule;
using fsp::KinematicChain;
using fsp::ObbObstacle;
using fsp::Vec3;

namespace {

ActionChunk chunk(std::initializer_list<std::initializer_list<double>> rows) {
  ActionChunk a(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (double v : row) a(r, c++) = v;
    ++r;
  }
  return a;
}

fsp::NetworkShape tiny_shape(std::size_t horizon, std::vector<std::size_t> hidden) {
  fsp::NetworkShape s;
  s.horizon = horizon;
  s.dof = 3;
  s.embed_width = 4;
  s.hidden = std::move(hidden);
  return s;
}

fsp::ConditionVector some_condition(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  fsp::ConditionVector c;
  c.joints = (fsp::JointState(3) << u(rng), u(rng), u(rng)).finished();
  c.target = Vec3(u(rng), u(rng), 0.0);
  c.obstacle_center = Vec3(u(rng), u(rng), 0.0);
  c.obstacle_yaw = u(rng);
  c.obstacle_half_extents = Vec3(0.05, 0.05, 0.05);
  return c;
}

// Straight-line demonstrations in joint space; no obstacle avoidance involved.
std::vector<fsp::Episode> toy_episodes(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  std::vector<fsp::Episode> eps;
  for (std::size_t e = 0; e < count; ++e) {
    fsp::Episode ep;
    ep.episode_id = e;
    const fsp::JointState q0 = (fsp::JointState(3) << u(rng), u(rng), u(rng)).finished();
    const fsp::JointState q1 = (fsp::JointState(3) << u(rng), u(rng), u(rng)).finished();
    ep.scene.start_joints = q0;
    ep.scene.target = fsp::end_effector(KinematicChain::planar_default(), q1);
    ep.scene.obstacle = ObbObstacle::from_yaw(Vec3(u(rng) * 0.4, u(rng) * 0.4, 0.0), u(rng), Vec3(0.05, 0.05, 0.05));
    for (int i = 0; i < 80; ++i) ep.trajectory.push_back(q0 + (q1 - q0) * (i / 79.0));
    eps.push_back(std::move(ep));
  }
  return eps;
}

std::vector<fsp::TrainSample> draw_batch(const std::vector<fsp::Episode>& eps, std::size_t size, std::size_t horizon,
                                         std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, eps.size() - 1);
  std::vector<fsp::TrainSample> batch;
  for (std::size_t i = 0; i < size; ++i) {
    const auto& ep = eps[pick(rng)];
    std::uniform_int_distribution<std::size_t> t(0, ep.trajectory.size() - 1);
    batch.push_back(fsp::make_sample(ep, t(rng), horizon, 2));
  }
  return batch;
}

bool same_bits(const fsp::PolicyNetwork& a, const fsp::PolicyNetwork& b) {
  for (std::size_t l = 0; l < a.layers().size(); ++l) {
    const auto& x = a.layers()[l];
    const auto& y = b.layers()[l];
    if (std::memcmp(x.weight.data(), y.weight.data(), x.weight.size() * sizeof(double)) != 0) return false;
    if (std::memcmp(x.bias.data(), y.bias.data(), x.bias.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

}  // namespace

TEST(Schedule, SingleStep) {
  const auto s = DiffusionSchedule::linear(1, 0.5, 0.5);
  ASSERT_EQ(s.alpha_bar.size(), 1u);
  EXPECT_DOUBLE_EQ(s.alpha_bar[0], 0.5);
  EXPECT_EQ(s.alpha_bar_at(0), 1.0);
}

TEST(Schedule, TwentyStepsMatchesDirectProduct) {
  const auto s = DiffusionSchedule::linear(20, 1e-4, 0.2);
  for (int k = 1; k <= 20; ++k) {
    double prod = 1.0;
    for (int j = 1; j <= k; ++j) prod *= 1.0 - (1e-4 + (0.2 - 1e-4) * (j - 1) / 19.0);
    EXPECT_NEAR(s.alpha_bar_at(k), prod, 1e-12);
    EXPECT_LT(s.alpha_bar_at(k), s.alpha_bar_at(k - 1));
  }
  EXPECT_LT(s.alpha_bar_at(20), 0.12);
}

TEST(Schedule, RejectsInvalidRange) {
  EXPECT_THROW(DiffusionSchedule::linear(20, 1e-4, 1.0), fsp::PolicyError);
  EXPECT_THROW(DiffusionSchedule::linear(0, 1e-4, 0.2), fsp::PolicyError);
  EXPECT_THROW(DiffusionSchedule::linear(5, 0.3, 0.2), fsp::PolicyError);
}

TEST(ForwardDiffuse, Limits) {
  const ActionChunk a0 = chunk({{1, 2, 3}});
  const ActionChunk eps = chunk({{-1, 0.5, 7}});
  EXPECT_EQ(fsp::forward_diffuse_with(a0, 1.0, eps), a0);
  EXPECT_EQ(fsp::forward_diffuse_with(a0, 0.0, eps), eps);
}

TEST(ForwardDiffuse, HandExample) {
  const ActionChunk out = fsp::forward_diffuse_with(chunk({{2}}), 0.25, chunk({{4}}));
  EXPECT_NEAR(out(0, 0), 1.0 + 4.0 * std::sqrt(0.75), 1e-15);
  EXPECT_NEAR(out(0, 0), 4.4641, 1e-4);
}

TEST(ForwardDiffuse, StepOutOfRange) {
  const auto s = DiffusionSchedule::linear(20, 1e-4, 0.2);
  const ActionChunk a = chunk({{0}});
  EXPECT_THROW(fsp::forward_diffuse(a, 0, a, s), fsp::PolicyError);
  EXPECT_THROW(fsp::forward_diffuse(a, 21, a, s), fsp::PolicyError);
  EXPECT_THROW(fsp::forward_diffuse(a, 3, chunk({{0, 0}}), s), fsp::PolicyError);
}

TEST(ForwardDiffuse, OracleDenoiserRecoversCleanChunk) {
  const auto s = DiffusionSchedule::linear(20, 1e-4, 0.2);
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  ActionChunk a0(16, 3);
  ActionChunk eps(16, 3);
  for (Eigen::Index i = 0; i < a0.size(); ++i) {
    a0.data()[i] = n(rng);
    eps.data()[i] = n(rng);
  }
  for (int k = 1; k <= 20; ++k) {
    const ActionChunk noisy = fsp::forward_diffuse(a0, k, eps, s);
    auto oracle = [&](const ActionChunk&) { return a0; };
    EXPECT_EQ(fsp::mse_loss(a0, oracle(noisy)), 0.0);
  }
}

TEST(Network, ZeroFinalLayerPredictsZero) {
  const auto net = fsp::PolicyNetwork::create(tiny_shape(4, {8, 8}), 3, true);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 5; ++i) {
    ActionChunk a = ActionChunk::Random(4, 3);
    const ActionChunk out = fsp::denoise_predict(net, a, some_condition(rng), 1 + i);
    EXPECT_EQ(out.cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(Network, DeterministicShape) {
  const auto shape = fsp::NetworkShape{};
  const auto n1 = fsp::PolicyNetwork::create(shape, 11);
  const auto n2 = fsp::PolicyNetwork::create(shape, 11);
  std::mt19937_64 rng(5);
  const auto cond = some_condition(rng);
  const ActionChunk a = ActionChunk::Constant(16, 3, 0.3);
  const ActionChunk x = fsp::denoise_predict(n1, a, cond, 7);
  const ActionChunk y = fsp::denoise_predict(n2, a, cond, 7);
  EXPECT_EQ(x.rows(), 16);
  EXPECT_EQ(x.cols(), 3);
  EXPECT_EQ(std::memcmp(x.data(), y.data(), sizeof(double) * x.size()), 0);
  EXPECT_EQ(shape.input_width(), 16u * 3u + 13u + 16u);
}

TEST(Network, TapeForwardMatchesPlainForward) {
  const auto net = fsp::PolicyNetwork::create(tiny_shape(4, {16, 16}), 9);
  std::mt19937_64 rng(6);
  const auto cond = some_condition(rng);
  const ActionChunk a = ActionChunk::Random(4, 3);
  const auto row = net.make_input(a, cond, 3);
  const auto plain = net.forward(row);
  ad::Tape tape;
  const auto params = net.bind(tape, false);
  const auto out = net.forward(params, tape.constant({1, row.size()}, row));
  ASSERT_EQ(out.size(), plain.size());
  EXPECT_EQ(std::memcmp(out.value().data(), plain.data(), plain.size() * sizeof(double)), 0);
}

TEST(Network, RejectsBadChunkShape) {
  const auto net = fsp::PolicyNetwork::create(tiny_shape(4, {8}), 1);
  std::mt19937_64 rng(1);
  EXPECT_THROW(fsp::denoise_predict(net, ActionChunk::Zero(3, 3), some_condition(rng), 1), fsp::PolicyError);
}

TEST(MseLoss, Examples) {
  EXPECT_EQ(fsp::mse_loss(chunk({{1, 2}}), chunk({{1, 2}})), 0.0);
  EXPECT_EQ(fsp::mse_loss(chunk({{1, 1}}), chunk({{0, 0}})), 1.0);
  EXPECT_EQ(fsp::mse_loss(chunk({{3}}), chunk({{1}})), 4.0);
}

TEST(GeoLoss, HingeHandCases) {
  ad::Tape tape;
  EXPECT_EQ(fsp::hinge_violation_loss(tape.constant({3}, {0.10, 0.5, 2.0}), 3, 0.10).item(), 0.0);
  EXPECT_NEAR(fsp::hinge_violation_loss(tape.constant({3}, {0.05, 0.5, 2.0}), 3, 0.10).item(), 0.0025, 1e-12);
  EXPECT_NEAR(fsp::hinge_violation_loss(tape.constant({4}, {0.05, 0.3, -0.02, 0.11}), 4, 0.10).item(), 0.00845,
              1e-12);
}

TEST(GeoLoss, RejectsNonPositiveDelta) {
  const auto chain = KinematicChain::planar_default();
  const auto box = ObbObstacle::from_yaw(Vec3(1, 1, 0), 0.0, Vec3(0.1, 0.1, 0.1));
  EXPECT_THROW(fsp::geo_loss(ActionChunk::Zero(2, 3), chain, box, 0.0), fsp::PolicyError);
}

TEST(GeoLoss, FarObstacleIsExactlyZero) {
  const auto chain = KinematicChain::planar_default();
  const auto box = ObbObstacle::from_yaw(Vec3(10, 0, 0), 0.0, Vec3(0.1, 0.1, 0.1));
  EXPECT_EQ(fsp::geo_loss(ActionChunk::Random(16, 3), chain, box, 0.10), 0.0);
}

TEST(GeoLoss, MatchesPlainClearanceOracle) {
  const auto chain = KinematicChain::planar_default();
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  int nonempty = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto box = ObbObstacle::from_yaw(Vec3(0.5 + 0.2 * u(rng), 0.2 * u(rng), 0.0), 3 * u(rng),
                                           Vec3(0.06, 0.05, 0.04));
    ActionChunk a(6, 3);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = 0.5 * u(rng);
    double sum = 0.0;
    int active = 0;
    for (Eigen::Index t = 0; t < a.rows(); ++t) {
      const auto poses = fsp::forward_kinematics(chain, a.row(t).transpose());
      for (const auto& [link, p] : fsp::representative_points(poses, chain)) {
        const double d = fsp::surface_clearance(p, 0.03, box);
        if (d < 0.10) {
          sum += (0.10 - d) * (0.10 - d);
          ++active;
        }
      }
    }
    const double expected = active == 0 ? 0.0 : sum / active;
    nonempty += active > 0 ? 1 : 0;
    EXPECT_NEAR(fsp::geo_loss(a, chain, box, 0.10), expected, 1e-12);
  }
  EXPECT_GT(nonempty, 10);
}

TEST(GeoLoss, BatchAveragesPerSampleLosses) {
  const auto chain = KinematicChain::planar_default();
  std::vector<ObbObstacle> boxes = {ObbObstacle::from_yaw(Vec3(0.6, 0.05, 0), 0.3, Vec3(0.05, 0.05, 0.05)),
                                    ObbObstacle::from_yaw(Vec3(5, 5, 0), 0.0, Vec3(0.05, 0.05, 0.05)),
                                    ObbObstacle::from_yaw(Vec3(0.3, -0.1, 0), 1.0, Vec3(0.07, 0.05, 0.05))};
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-0.4, 0.4);
  std::vector<ActionChunk> chunks(3, ActionChunk(4, 3));
  std::vector<double> flat;
  double expected = 0.0;
  for (std::size_t b = 0; b < 3; ++b) {
    for (Eigen::Index i = 0; i < chunks[b].size(); ++i) chunks[b].data()[i] = u(rng);
    flat.insert(flat.end(), chunks[b].data(), chunks[b].data() + chunks[b].size());
    expected += fsp::geo_loss(chunks[b], chain, boxes[b], 0.10) / 3.0;
  }
  ad::Tape tape;
  const double got = fsp::geo_loss(tape.constant({3, 12}, flat), 4, chain, boxes, 0.10).item();
  EXPECT_NEAR(got, expected, 1e-15);
  EXPECT_GT(got, 0.0);
}

TEST(GeoLoss, MonotoneInActiveClearances) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(-0.05, 0.099);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> d = {u(rng), u(rng), u(rng), 0.2};
    ad::Tape tape;
    const double before = fsp::hinge_violation_loss(tape.constant({4}, d), 4, 0.10).item();
    const std::size_t i = static_cast<std::size_t>(trial % 3);
    d[i] = d[i] + (0.0999 - d[i]) * 0.5;
    const double after = fsp::hinge_violation_loss(tape.constant({4}, d), 4, 0.10).item();
    EXPECT_LE(after, before);
  }
}

TEST(GeoLoss, GradientThroughKinematicsAndSdf) {
  const auto chain = KinematicChain::planar_default();
  const auto box = ObbObstacle::from_yaw(Vec3(0.68, 0.10, 0.0), 0.4, Vec3(0.06, 0.05, 0.05));
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  int checked = 0;
  while (checked < 10) {
    std::vector<double> x(12);
    for (double& v : x) v = u(rng);
    auto f = [&](ad::Tape&, const ad::Tensor& t) {
      return fsp::geo_loss(ad::reshape(t, {1, 12}), 4, chain, std::span<const ObbObstacle>(&box, 1), 0.10);
    };
    ad::Tape probe;
    if (f(probe, probe.constant({12}, x)).item() == 0.0) continue;
    EXPECT_LE(ad::gradient_check(f, {12}, x), 1e-4);
    ++checked;
  }
}

TEST(TrainStep, TotalLossGradientOnTinyNet) {
  const auto chain = KinematicChain::planar_default();
  const auto schedule = DiffusionSchedule::linear(5, 1e-4, 0.2);
  const auto shape = tiny_shape(2, {2});
  const auto net = fsp::PolicyNetwork::create(shape, 4);
  std::mt19937_64 rng(12);
  std::vector<fsp::TrainSample> batch;
  std::vector<double> inputs;
  std::vector<double> targets;
  std::vector<ObbObstacle> boxes;
  std::normal_distribution<double> n(0.0, 1.0);
  for (int b = 0; b < 2; ++b) {
    fsp::TrainSample s{ActionChunk::Random(2, 3) * 0.2, some_condition(rng),
                       ObbObstacle::from_yaw(Vec3(0.7, 0.05 * b, 0.0), 0.2, Vec3(0.05, 0.05, 0.05))};
    ActionChunk eps(2, 3);
    for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = n(rng);
    const auto row = net.make_input(fsp::forward_diffuse(s.action, 2 + b, eps, schedule), s.cond, 2 + b);
    inputs.insert(inputs.end(), row.begin(), row.end());
    targets.insert(targets.end(), s.action.data(), s.action.data() + s.action.size());
    boxes.push_back(s.obstacle);
  }
  std::vector<double> theta;
  std::vector<ad::Shape> shapes;
  for (const auto& l : net.layers()) {
    theta.insert(theta.end(), l.weight.begin(), l.weight.end());
    shapes.push_back({l.in, l.out});
    theta.insert(theta.end(), l.bias.begin(), l.bias.end());
    shapes.push_back({1, l.out});
  }
  auto f = [&](ad::Tape& tape, const ad::Tensor& t) {
    std::vector<ad::Tensor> params;
    std::size_t off = 0;
    for (const auto& s : shapes) {
      params.push_back(ad::reshape(ad::slice(t, 0, off, off + ad::numel(s)), s));
      off += ad::numel(s);
    }
    const auto pred = net.forward(params, tape.constant({2, shape.input_width()}, inputs));
    const auto mse = fsp::mse_loss(tape.constant({2, shape.output_width()}, targets), pred);
    const auto geo = fsp::geo_loss(pred, 2, chain, boxes, 0.10);
    return ad::add(mse, ad::scalar_mul(geo, 1.0));
  };
  ad::Tape probe;
  const auto params = net.bind(probe, false);
  const auto pred = net.forward(params, probe.constant({2, shape.input_width()}, inputs));
  ASSERT_GT(fsp::geo_loss(pred, 2, chain, boxes, 0.10).item(), 0.0);
  EXPECT_LE(ad::gradient_check(f, {theta.size()}, theta), 1e-4);
}

TEST(TrainStep, RejectsNegativeLambdaAndEmptyBatch) {
  const auto chain = KinematicChain::planar_default();
  const auto schedule = DiffusionSchedule::linear(5, 1e-4, 0.2);
  auto net = fsp::PolicyNetwork::create(tiny_shape(4, {8}), 1);
  fsp::AdamOptimizer adam;
  fsp::Rng rng(1);
  const auto eps = toy_episodes(2, 1);
  std::mt19937_64 pick(2);
  const auto batch = draw_batch(eps, 2, 4, pick);
  fsp::TrainOptions opt;
  opt.lambda = -1.0;
  EXPECT_THROW(fsp::train_step(net, batch, schedule, chain, opt, adam, rng), fsp::PolicyError);
  EXPECT_THROW(fsp::train_step(net, std::span<const fsp::TrainSample>{}, schedule, chain, {}, adam, rng),
               fsp::PolicyError);
}

TEST(TrainStep, LambdaZeroIsBitIdenticalToGeometryDisabled) {
  const auto chain = KinematicChain::planar_default();
  const auto schedule = DiffusionSchedule::linear(20, 1e-4, 0.2);
  const auto eps = toy_episodes(6, 5);
  auto run = [&](fsp::TrainOptions opt) {
    auto net = fsp::PolicyNetwork::create(tiny_shape(4, {32, 32}), 77);
    fsp::AdamOptimizer adam;
    fsp::Rng rng(99);
    std::mt19937_64 pick(100);
    for (int step = 0; step < 20; ++step) {
      const auto batch = draw_batch(eps, 8, 4, pick);
      const auto losses = fsp::train_step(net, batch, schedule, chain, opt, adam, rng);
      EXPECT_EQ(losses.total, losses.mse + opt.lambda * losses.geo);
    }
    return net;
  };
  fsp::TrainOptions with_geo{0.0, 0.10, true};
  fsp::TrainOptions without{0.0, 0.10, false};
  EXPECT_TRUE(same_bits(run(with_geo), run(without)));
}

TEST(TrainStep, FarObstacleMatchesLambdaZero) {
  const auto chain = KinematicChain::planar_default();
  const auto schedule = DiffusionSchedule::linear(20, 1e-4, 0.2);
  auto eps = toy_episodes(4, 9);
  for (auto& ep : eps) ep.scene.obstacle.center = Vec3(10, 0, 0);
  auto run = [&](double lambda) {
    auto net = fsp::PolicyNetwork::create(tiny_shape(4, {16}), 7);
    fsp::AdamOptimizer adam;
    fsp::Rng rng(3);
    std::mt19937_64 pick(4);
    const auto batch = draw_batch(eps, 6, 4, pick);
    const auto losses = fsp::train_step(net, batch, schedule, chain, {lambda, 0.10, true}, adam, rng);
    EXPECT_EQ(losses.geo, 0.0);
    return net;
  };
  EXPECT_TRUE(same_bits(run(1.0), run(0.0)));
}

TEST(Sampling, SingleStepCollapsesToOnePrediction) {
  const auto net = fsp::PolicyNetwork::create(tiny_shape(4, {8}), 2);
  const auto schedule = DiffusionSchedule::linear(1, 0.3, 0.3);
  std::mt19937_64 crng(1);
  const auto cond = some_condition(crng);
  fsp::Rng rng(42);
  const ActionChunk sampled = fsp::sample_chunk(net, cond, schedule, rng);
  fsp::Rng replay(42);
  std::normal_distribution<double> n(0.0, 1.0);
  ActionChunk noise(4, 3);
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = n(replay);
  EXPECT_EQ(sampled, fsp::denoise_predict(net, noise, cond, 1));
}

TEST(Sampling, DeterministicAndFinite) {
  const auto net = fsp::PolicyNetwork::create(fsp::NetworkShape{}, 2);
  const auto schedule = DiffusionSchedule::linear(20, 1e-4, 0.2);
  std::mt19937_64 crng(4);
  for (int i = 0; i < 100; ++i) {
    const auto cond = some_condition(crng);
    fsp::Rng a(i);
    fsp::Rng b(i);
    const ActionChunk x = fsp::sample_chunk(net, cond, schedule, a);
    const ActionChunk y = fsp::sample_chunk(net, cond, schedule, b);
    ASSERT_EQ(x.rows(), 16);
    ASSERT_EQ(x.cols(), 3);
    EXPECT_TRUE(x.allFinite());
    EXPECT_EQ(std::memcmp(x.data(), y.data(), sizeof(double) * x.size()), 0);
  }
}

TEST(ExpertChunk, StrideAndHold) {
  fsp::Episode ep;
  for (int i = 0; i < 10; ++i) ep.trajectory.push_back(fsp::JointState::Constant(3, i));
  const ActionChunk c = fsp::expert_chunk(ep, 4, 4, 2);
  EXPECT_EQ(c(0, 0), 6.0);
  EXPECT_EQ(c(1, 0), 8.0);
  EXPECT_EQ(c(2, 0), 9.0);
  EXPECT_EQ(c(3, 0), 9.0);
}

TEST(Checkpoint, RoundTripAndChainCheck) {
  fsp::Checkpoint ck{fsp::PolicyNetwork::create(tiny_shape(4, {8, 8}), 5), DiffusionSchedule::linear(20, 1e-4, 0.2),
                     KinematicChain::planar_default().hash(), {{"lambda", 1.0}}};
  const std::string text = fsp::checkpoint_to_json(ck);
  const auto back = fsp::checkpoint_from_json(text, ck.chain_hash);
  EXPECT_TRUE(same_bits(back.network, ck.network));
  EXPECT_EQ(back.schedule.alpha_bar, ck.schedule.alpha_bar);
  EXPECT_EQ(fsp::checkpoint_to_json(back), text);
  EXPECT_THROW(fsp::checkpoint_from_json(text, "0000"), fsp::CheckpointError);
  EXPECT_THROW(fsp::checkpoint_from_json("{", ck.chain_hash), fsp::CheckpointError);
}
