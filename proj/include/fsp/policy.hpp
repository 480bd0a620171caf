#pragma once

// Chunk-denoising policy: noise schedule, x0-predicting network, imitation and
// feasibility losses, the combined training step, sampling, and checkpoints.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsp/autodiff.hpp"
#include "fsp/episode.hpp"
#include "fsp/field.hpp"
#include "fsp/geometry.hpp"
#include "fsp/kinematics.hpp"

namespace fsp {

using Rng = std::mt19937_64;

class PolicyError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Noise schedule

struct DiffusionSchedule {
  int steps = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
  std::vector<double> beta;       // beta[k-1] for k = 1..steps
  std::vector<double> alpha_bar;  // alpha_bar[k-1] = prod_{j<=k} (1 - beta_j)

  /// Linearly spaced betas; alpha_bar by cumulative product.
  static DiffusionSchedule linear(int steps, double beta_start, double beta_end) {
    if (steps < 1) throw PolicyError("schedule: need at least one diffusion step");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
      throw PolicyError("schedule: require 0 < beta_start <= beta_end < 1");
    }
    DiffusionSchedule s;
    s.steps = steps;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    double prod = 1.0;
    for (int k = 1; k <= steps; ++k) {
      const double b =
          steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * static_cast<double>(k - 1) / (steps - 1);
      prod *= 1.0 - b;
      s.beta.push_back(b);
      s.alpha_bar.push_back(prod);
    }
    return s;
  }

  /// alpha_bar at level k; level 0 is the clean chunk.
  double alpha_bar_at(int k) const {
    if (k < 0 || k > steps) throw PolicyError("schedule: level " + std::to_string(k) + " out of range");
    return k == 0 ? 1.0 : alpha_bar[static_cast<std::size_t>(k - 1)];
  }
};

// ---------------------------------------------------------------------------
// Chunks and conditioning

/// T_a x DOF joint targets in radians, row-major.
using ActionChunk = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// a_k = sqrt(alpha_bar_k) a0 + sqrt(1 - alpha_bar_k) eps
inline ActionChunk forward_diffuse_with(const ActionChunk& a0, double alpha_bar, const ActionChunk& eps) {
  if (a0.rows() != eps.rows() || a0.cols() != eps.cols()) throw PolicyError("forward_diffuse: noise shape mismatch");
  return std::sqrt(alpha_bar) * a0 + std::sqrt(1.0 - alpha_bar) * eps;
}

inline ActionChunk forward_diffuse(const ActionChunk& a0, int k, const ActionChunk& eps, const DiffusionSchedule& s) {
  if (k < 1 || k > s.steps) throw PolicyError("forward_diffuse: step " + std::to_string(k) + " outside [1, K]");
  return forward_diffuse_with(a0, s.alpha_bar_at(k), eps);
}

/// Low-dimensional stand-in for the observation and instruction.
struct ConditionVector {
  JointState joints;
  Vec3 target = Vec3::Zero();
  Vec3 obstacle_center = Vec3::Zero();
  double obstacle_yaw = 0.0;
  Vec3 obstacle_half_extents = Vec3::Zero();

  static ConditionVector from_scene(const Scene& scene, const JointState& current) {
    return {current, scene.target, scene.obstacle.center, scene.obstacle.yaw(), scene.obstacle.half_extents};
  }

  static std::size_t width(std::size_t dof) { return dof + 10; }

  std::vector<double> flatten() const {
    std::vector<double> v(joints.data(), joints.data() + joints.size());
    for (int i = 0; i < 3; ++i) v.push_back(target[i]);
    for (int i = 0; i < 3; ++i) v.push_back(obstacle_center[i]);
    v.push_back(obstacle_yaw);
    for (int i = 0; i < 3; ++i) v.push_back(obstacle_half_extents[i]);
    return v;
  }
};

/// Sinusoidal encoding of the diffusion level.
inline std::vector<double> step_embedding(int k, std::size_t width) {
  std::vector<double> e(width);
  const std::size_t half = width / 2;
  for (std::size_t j = 0; j < half; ++j) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(j) / static_cast<double>(half));
    e[2 * j] = std::sin(k * freq);
    e[2 * j + 1] = std::cos(k * freq);
  }
  return e;
}

// ---------------------------------------------------------------------------
// Network

struct NetworkShape {
  std::size_t horizon = 16;
  std::size_t dof = 3;
  std::size_t embed_width = 16;
  std::vector<std::size_t> hidden = {256, 256, 256};

  std::size_t cond_width() const { return ConditionVector::width(dof); }
  std::size_t input_width() const { return horizon * dof + cond_width() + embed_width; }
  std::size_t output_width() const { return horizon * dof; }
};

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weight;  // in x out, row-major
  std::vector<double> bias;
};

/// Fully connected x0-predictor with tanh hidden units and a linear output.
class PolicyNetwork {
 public:
  PolicyNetwork() = default;

  static PolicyNetwork create(const NetworkShape& shape, std::uint64_t seed, bool zero_output_layer = false) {
    PolicyNetwork net;
    net.shape_ = shape;
    Rng rng(seed);
    std::vector<std::size_t> widths = {shape.input_width()};
    widths.insert(widths.end(), shape.hidden.begin(), shape.hidden.end());
    widths.push_back(shape.output_width());
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      DenseLayer layer{widths[l], widths[l + 1], {}, std::vector<double>(widths[l + 1], 0.0)};
      const double limit = std::sqrt(6.0 / static_cast<double>(layer.in + layer.out));
      std::uniform_real_distribution<double> u(-limit, limit);
      layer.weight.resize(layer.in * layer.out);
      const bool last = l + 2 == widths.size();
      for (double& w : layer.weight) w = (last && zero_output_layer) ? 0.0 : u(rng);
      net.layers_.push_back(std::move(layer));
    }
    return net;
  }

  const NetworkShape& shape() const { return shape_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const DenseLayer& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
  }

  /// Parameters as tape leaves, in layer order (weight, bias, weight, bias, ...).
  std::vector<ad::Tensor> bind(ad::Tape& tape, bool trainable) const {
    std::vector<ad::Tensor> params;
    for (const DenseLayer& l : layers_) {
      params.push_back(trainable ? tape.variable({l.in, l.out}, l.weight) : tape.constant({l.in, l.out}, l.weight));
      params.push_back(trainable ? tape.variable({1, l.out}, l.bias) : tape.constant({1, l.out}, l.bias));
    }
    return params;
  }

  /// Batched forward pass on the tape: [B, input_width] -> [B, output_width].
  ad::Tensor forward(const std::vector<ad::Tensor>& params, const ad::Tensor& input) const {
    const std::size_t rows = input.shape().at(0);
    ad::Tensor h = input;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      h = ad::matmul(h, params[2 * l]) + ad::broadcast_rows(params[2 * l + 1], rows);
      if (l + 1 < layers_.size()) h = ad::tanh(h);
    }
    return h;
  }

  /// Plain forward pass for one input row. Bit-identical to the tape version.
  std::vector<double> forward(std::span<const double> input) const {
    if (input.size() != shape_.input_width()) throw PolicyError("network: input width mismatch");
    std::vector<double> h(input.begin(), input.end());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const DenseLayer& layer = layers_[l];
      std::vector<double> out(layer.out, 0.0);
      for (std::size_t p = 0; p < layer.in; ++p) {
        const double s = h[p];
        if (s == 0.0) continue;
        const double* row = layer.weight.data() + p * layer.out;
        for (std::size_t j = 0; j < layer.out; ++j) out[j] += s * row[j];
      }
      for (std::size_t j = 0; j < layer.out; ++j) {
        out[j] = out[j] + layer.bias[j];
        if (l + 1 < layers_.size()) out[j] = std::tanh(out[j]);
      }
      h = std::move(out);
    }
    return h;
  }

  std::vector<double> make_input(const ActionChunk& noisy, const ConditionVector& cond, int k) const {
    if (static_cast<std::size_t>(noisy.rows()) != shape_.horizon ||
        static_cast<std::size_t>(noisy.cols()) != shape_.dof) {
      throw PolicyError("network: chunk must be " + std::to_string(shape_.horizon) + " x " + std::to_string(shape_.dof));
    }
    std::vector<double> in(noisy.data(), noisy.data() + noisy.size());
    const auto c = cond.flatten();
    if (c.size() != shape_.cond_width()) throw PolicyError("network: condition width mismatch");
    in.insert(in.end(), c.begin(), c.end());
    const auto e = step_embedding(k, shape_.embed_width);
    in.insert(in.end(), e.begin(), e.end());
    return in;
  }

 private:
  NetworkShape shape_;
  std::vector<DenseLayer> layers_;
};

/// a0_hat = F(a_k, cond, k)
inline ActionChunk denoise_predict(const PolicyNetwork& net, const ActionChunk& noisy, const ConditionVector& cond,
                                   int k) {
  const auto out = net.forward(net.make_input(noisy, cond, k));
  ActionChunk chunk(static_cast<Eigen::Index>(net.shape().horizon), static_cast<Eigen::Index>(net.shape().dof));
  std::copy(out.begin(), out.end(), chunk.data());
  return chunk;
}

// ---------------------------------------------------------------------------
// Losses

/// Mean of squared elementwise differences.
inline double mse_loss(const ActionChunk& a0, const ActionChunk& predicted) {
  if (a0.rows() != predicted.rows() || a0.cols() != predicted.cols()) throw PolicyError("mse_loss: shape mismatch");
  return (a0 - predicted).array().square().mean();
}

inline ad::Tensor mse_loss(const ad::Tensor& a0, const ad::Tensor& predicted) {
  return ad::mean(ad::square(ad::sub(a0, predicted)));
}

/// Squared hinge averaged over active violations, per group.
///
/// `clearance` holds group-major blocks of `group_size` values. Each group's
/// loss is mean over {d < delta} of (delta - d)^2, or exactly 0 when no entry
/// violates; the result is the mean of the group losses.
inline ad::Tensor hinge_violation_loss(const ad::Tensor& clearance, std::size_t group_size, double delta) {
  if (!(delta > 0.0)) throw PolicyError("geo_loss: delta must be positive");
  const std::size_t n = clearance.size();
  if (group_size == 0 || n % group_size != 0) throw PolicyError("geo_loss: clearance count not divisible by group size");
  const std::size_t groups = n / group_size;
  auto d = clearance.value();
  std::vector<double> weight(n, 0.0);
  for (std::size_t g = 0; g < groups; ++g) {
    std::size_t active = 0;
    for (std::size_t i = 0; i < group_size; ++i) active += d[g * group_size + i] < delta ? 1 : 0;
    if (active == 0) continue;
    const double w = 1.0 / (static_cast<double>(active) * static_cast<double>(groups));
    for (std::size_t i = 0; i < group_size; ++i) {
      if (d[g * group_size + i] < delta) weight[g * group_size + i] = w;
    }
  }
  ad::Tape& tape = clearance.tape();
  ad::Tensor hinge = ad::square(ad::relu(ad::add_scalar(ad::neg(ad::reshape(clearance, {n})), delta)));
  return ad::sum(ad::mul(hinge, tape.constant({n}, std::move(weight))));
}

/// Surface clearances of every (sample, step, representative link).
///
/// `chunks` is [B, T_a * DOF]; the result is [B * T_a * |S|] ordered
/// sample-major, then step, then link. `boxes[b]` is sample b's obstacle.
inline ad::Tensor chunk_clearances(const ad::Tensor& chunks, std::size_t horizon, const KinematicChain& chain,
                                   std::span<const ObbObstacle> boxes) {
  ad::Tape& tape = chunks.tape();
  const std::size_t dof = chain.dof();
  const std::size_t batch = boxes.size();
  if (chunks.size() != batch * horizon * dof) {
    throw PolicyError("geo_loss: chunk tensor " + ad::shape_str(chunks.shape()) + " does not hold " +
                      std::to_string(batch) + " chunks of " + std::to_string(horizon) + " x " + std::to_string(dof));
  }
  const std::size_t m = batch * horizon;
  ad::Tensor rows = ad::reshape(chunks, {m, dof});
  std::vector<ad::Field> joints;
  for (std::size_t j = 0; j < dof; ++j) joints.emplace_back(ad::reshape(ad::slice(rows, 1, j, j + 1), {m}));
  const auto origins = ad_kinematics::frame_origins(chain, joints);
  const auto fields = ad_geometry::box_fields(tape, boxes, horizon);
  std::vector<ad::Tensor> per_link;
  for (const ClearancePoint& c : chain.representative()) {
    ad::Tensor sdf = ad_geometry::obb_sdf(tape, origins[c.link], fields, m);
    per_link.push_back(ad::reshape(ad::add_scalar(sdf, -c.radius), {m, 1}));
  }
  return ad::reshape(ad::concat(per_link, 1), {m * per_link.size()});
}

/// Feasibility loss of a batch of predicted chunks, averaged over the batch.
inline ad::Tensor geo_loss(const ad::Tensor& chunks, std::size_t horizon, const KinematicChain& chain,
                           std::span<const ObbObstacle> boxes, double delta) {
  if (!(delta > 0.0)) throw PolicyError("geo_loss: delta must be positive");
  ad::Tensor d = chunk_clearances(chunks, horizon, chain, boxes);
  return hinge_violation_loss(d, horizon * chain.representative().size(), delta);
}

inline double geo_loss(const ActionChunk& chunk, const KinematicChain& chain, const ObbObstacle& box, double delta) {
  ad::Tape tape;
  ad::Tensor t = tape.constant({1, static_cast<std::size_t>(chunk.size())},
                               std::vector<double>(chunk.data(), chunk.data() + chunk.size()));
  return geo_loss(t, static_cast<std::size_t>(chunk.rows()), chain, std::span<const ObbObstacle>(&box, 1), delta).item();
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamOptimizer {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t t = 0;
  std::vector<double> m;
  std::vector<double> v;

  void step(PolicyNetwork& net, const std::vector<ad::Tensor>& params) {
    if (m.empty()) {
      m.assign(net.parameter_count(), 0.0);
      v.assign(net.parameter_count(), 0.0);
    }
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    std::size_t offset = 0;
    auto update = [&](std::vector<double>& values, const ad::Tensor& tensor) {
      auto g = tensor.grad();
      for (std::size_t i = 0; i < values.size(); ++i) {
        const std::size_t idx = offset + i;
        m[idx] = beta1 * m[idx] + (1.0 - beta1) * g[i];
        v[idx] = beta2 * v[idx] + (1.0 - beta2) * g[i] * g[i];
        values[i] -= lr * (m[idx] / c1) / (std::sqrt(v[idx] / c2) + eps);
      }
      offset += values.size();
    };
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
      update(net.layers()[l].weight, params[2 * l]);
      update(net.layers()[l].bias, params[2 * l + 1]);
    }
  }
};

// ---------------------------------------------------------------------------
// Training

/// One supervised example: the expert chunk, its conditioning, and the scene obstacle.
struct TrainSample {
  ActionChunk action;
  ConditionVector cond;
  ObbObstacle obstacle;
};

/// Expert chunk starting at waypoint t: rows are trajectory[t + stride * (i + 1)], held at the last waypoint.
inline ActionChunk expert_chunk(const Episode& ep, std::size_t t, std::size_t horizon, std::size_t stride) {
  const std::size_t n = ep.trajectory.size();
  const std::size_t dof = static_cast<std::size_t>(ep.trajectory.front().size());
  ActionChunk chunk(static_cast<Eigen::Index>(horizon), static_cast<Eigen::Index>(dof));
  for (std::size_t i = 0; i < horizon; ++i) {
    const std::size_t idx = std::min(t + stride * (i + 1), n - 1);
    chunk.row(static_cast<Eigen::Index>(i)) = ep.trajectory[idx].transpose();
  }
  return chunk;
}

inline TrainSample make_sample(const Episode& ep, std::size_t t, std::size_t horizon, std::size_t stride) {
  return {expert_chunk(ep, t, horizon, stride), ConditionVector::from_scene(ep.scene, ep.trajectory.at(t)),
          ep.scene.obstacle};
}

struct TrainOptions {
  double lambda = 1.0;
  double delta = 0.10;
  /// When false the feasibility branch is never built (imitation-only build).
  bool geometry_enabled = true;
};

struct StepLosses {
  double mse = 0.0;
  double geo = 0.0;
  double total = 0.0;
};

/// One update of L = L_MSE + lambda * L_geo on a batch, both terms averaged over samples.
///
/// Randomness is drawn from `rng` in a fixed order: per sample the level k,
/// then horizon x DOF standard normals.
inline StepLosses train_step(PolicyNetwork& net, std::span<const TrainSample> batch, const DiffusionSchedule& schedule,
                             const KinematicChain& chain, const TrainOptions& opt, AdamOptimizer& adam, Rng& rng) {
  if (batch.empty()) throw PolicyError("train_step: empty batch");
  if (opt.lambda < 0.0) throw PolicyError("train_step: lambda must be non-negative");
  const NetworkShape& shape = net.shape();
  const std::size_t b = batch.size();
  const std::size_t in_w = shape.input_width();
  const std::size_t out_w = shape.output_width();
  std::vector<double> inputs;
  std::vector<double> targets;
  std::vector<ObbObstacle> boxes;
  inputs.reserve(b * in_w);
  targets.reserve(b * out_w);
  std::uniform_int_distribution<int> level(1, schedule.steps);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const TrainSample& s : batch) {
    const int k = level(rng);
    ActionChunk eps(s.action.rows(), s.action.cols());
    for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = normal(rng);
    const ActionChunk noisy = forward_diffuse(s.action, k, eps, schedule);
    const auto row = net.make_input(noisy, s.cond, k);
    inputs.insert(inputs.end(), row.begin(), row.end());
    targets.insert(targets.end(), s.action.data(), s.action.data() + s.action.size());
    boxes.push_back(s.obstacle);
  }

  ad::Tape tape;
  const auto params = net.bind(tape, true);
  ad::Tensor pred = net.forward(params, tape.constant({b, in_w}, std::move(inputs)));
  ad::Tensor mse = mse_loss(tape.constant({b, out_w}, std::move(targets)), pred);
  StepLosses out;
  out.mse = mse.item();
  ad::Tensor total = mse;
  if (opt.geometry_enabled) {
    ad::Tensor geo = geo_loss(pred, shape.horizon, chain, boxes, opt.delta);
    out.geo = geo.item();
    total = ad::add(mse, ad::scalar_mul(geo, opt.lambda));
  }
  out.total = total.item();
  tape.backward(total);
  adam.step(net, params);
  return out;
}

// ---------------------------------------------------------------------------
// Sampling

/// Ancestral x0-posterior sampling from standard normal noise.
inline ActionChunk sample_chunk(const PolicyNetwork& net, const ConditionVector& cond, const DiffusionSchedule& schedule,
                                Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto rows = static_cast<Eigen::Index>(net.shape().horizon);
  const auto cols = static_cast<Eigen::Index>(net.shape().dof);
  ActionChunk a(rows, cols);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = normal(rng);
  ActionChunk x0;
  for (int k = schedule.steps; k >= 1; --k) {
    x0 = denoise_predict(net, a, cond, k);
    if (k > 1) {
      const double ab = schedule.alpha_bar_at(k - 1);
      ActionChunk eps(rows, cols);
      for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = normal(rng);
      a = std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
    }
  }
  return x0;
}

// ---------------------------------------------------------------------------
// Checkpoints

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  PolicyNetwork network;
  DiffusionSchedule schedule;
  std::string chain_hash;
  nlohmann::ordered_json training;  // free-form run configuration
};

inline constexpr int kCheckpointVersion = 1;

inline std::string checkpoint_to_json(const Checkpoint& ck) {
  nlohmann::ordered_json j;
  j["format"] = "fsp-checkpoint";
  j["version"] = kCheckpointVersion;
  j["chain_hash"] = ck.chain_hash;
  const NetworkShape& s = ck.network.shape();
  j["network"] = {{"horizon", s.horizon}, {"dof", s.dof}, {"embed_width", s.embed_width}, {"hidden", s.hidden}};
  nlohmann::ordered_json layers = nlohmann::ordered_json::array();
  for (const DenseLayer& l : ck.network.layers()) {
    layers.push_back({{"in", l.in}, {"out", l.out}, {"weight", l.weight}, {"bias", l.bias}});
  }
  j["network"]["layers"] = std::move(layers);
  j["schedule"] = {{"steps", ck.schedule.steps}, {"beta_start", ck.schedule.beta_start}, {"beta_end", ck.schedule.beta_end}};
  j["training"] = ck.training;
  return j.dump();
}

/// Parses a checkpoint and verifies it was trained for `expected_chain_hash`.
inline Checkpoint checkpoint_from_json(const std::string& text, const std::string& expected_chain_hash) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }
  if (j.value("format", "") != "fsp-checkpoint") throw CheckpointError("checkpoint: unrecognized format");
  if (j.value("version", 0) != kCheckpointVersion) throw CheckpointError("checkpoint: unsupported version");
  Checkpoint ck;
  ck.chain_hash = j.at("chain_hash").get<std::string>();
  if (ck.chain_hash != expected_chain_hash) {
    throw CheckpointError("checkpoint: chain hash " + ck.chain_hash + " does not match " + expected_chain_hash);
  }
  const auto& n = j.at("network");
  NetworkShape shape;
  shape.horizon = n.at("horizon").get<std::size_t>();
  shape.dof = n.at("dof").get<std::size_t>();
  shape.embed_width = n.at("embed_width").get<std::size_t>();
  shape.hidden = n.at("hidden").get<std::vector<std::size_t>>();
  ck.network = PolicyNetwork::create(shape, 0);
  const auto& layers = n.at("layers");
  if (layers.size() != ck.network.layers().size()) throw CheckpointError("checkpoint: layer count mismatch");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    DenseLayer& dst = ck.network.layers()[l];
    auto w = layers[l].at("weight").get<std::vector<double>>();
    auto b = layers[l].at("bias").get<std::vector<double>>();
    if (w.size() != dst.weight.size() || b.size() != dst.bias.size()) {
      throw CheckpointError("checkpoint: layer " + std::to_string(l) + " size mismatch");
    }
    dst.weight = std::move(w);
    dst.bias = std::move(b);
  }
  const auto& s = j.at("schedule");
  ck.schedule = DiffusionSchedule::linear(s.at("steps").get<int>(), s.at("beta_start").get<double>(),
                                          s.at("beta_end").get<double>());
  ck.training = j.at("training");
  return ck;
}

}  // namespace fsp
