#include "dragtraffic/initializer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dragtraffic/error.hpp"
#include "dragtraffic/nn/ops.hpp"

namespace dragtraffic {

std::vector<double> TrajectoryBatch::probabilities() const {
  std::vector<double> p(scores.size());
  if (scores.empty()) return p;
  const double m = *std::max_element(scores.begin(), scores.end());
  double z = 0.0;
  for (std::size_t k = 0; k < scores.size(); ++k) z += p[k] = std::exp(scores[k] - m);
  for (double& v : p) v /= z;
  return p;
}

std::size_t TrajectoryBatch::best_mode() const {
  if (scores.empty()) throw ValidationError("trajectory batch has no modes");
  return static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
}

TrajectoryBatch to_trajectory_batch(const nn::Tensor& modes, std::span<const double> scores, double position_scale) {
  if (modes.cols() % 2 != 0) throw ShapeError("trajectory rows must hold (x, y) pairs");
  TrajectoryBatch out;
  out.scores.assign(scores.begin(), scores.end());
  const std::size_t steps = modes.cols() / 2;
  for (std::size_t k = 0; k < modes.rows(); ++k) {
    std::vector<Vec2> mode(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      mode[t] = {modes(k, 2 * t) * position_scale, modes(k, 2 * t + 1) * position_scale};
    }
    out.modes.push_back(std::move(mode));
  }
  return out;
}

ClosestMode closest_mode_mse(const TrajectoryBatch& batch, std::span<const Vec2> ground_truth) {
  if (batch.modes.empty()) throw ValidationError("trajectory batch has no modes");
  ClosestMode best{std::numeric_limits<double>::infinity(), 0};
  double best_ade = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < batch.modes.size(); ++k) {
    const auto& mode = batch.modes[k];
    if (mode.size() != ground_truth.size()) {
      throw ValidationError("ground truth has " + std::to_string(ground_truth.size()) + " steps, mode has " +
                            std::to_string(mode.size()));
    }
    double ade = 0.0;
    double mse = 0.0;
    for (std::size_t t = 0; t < mode.size(); ++t) {
      const double d = (mode[t] - ground_truth[t]).norm();
      ade += d;
      mse += d * d;
    }
    if (ade < best_ade) {
      best_ade = ade;
      best = {mse / static_cast<double>(mode.size()), k};
    }
  }
  return best;
}

double score_nll(const TrajectoryBatch& batch, std::size_t index) {
  if (index >= batch.scores.size()) {
    throw ValidationError("mode index " + std::to_string(index) + " out of range for " +
                          std::to_string(batch.scores.size()) + " scores");
  }
  const double m = *std::max_element(batch.scores.begin(), batch.scores.end());
  double z = 0.0;
  for (double s : batch.scores) z += std::exp(s - m);
  return -(batch.scores[index] - m - std::log(z));
}

Initializer Initializer::create(nn::ParamStore& params, const std::string& prefix, const std::string& group,
                                const EncoderConfig& encoder, const InitializerConfig& config, Rng& rng) {
  Initializer init;
  init.config_ = config;
  init.encoder_ = ContextEncoder::create(params, prefix + ".enc", group, encoder, rng);
  init.trunk_ = nn::DenseLayer::create(params, prefix + ".trunk", group, encoder.embedding, config.trunk, rng);
  init.trajectory_head_ = nn::DenseLayer::create(params, prefix + ".traj_head", group, config.trunk,
                                                 config.modes * config.steps * 2, rng, 0.02);
  init.score_head_ = nn::DenseLayer::create(params, prefix + ".score_head", group, config.trunk, config.modes, rng, 0.1);
  return init;
}

Initializer Initializer::bind(const nn::ParamStore& params, const std::string& prefix, const EncoderConfig& encoder,
                              const InitializerConfig& config) {
  Initializer init;
  init.config_ = config;
  init.encoder_ = ContextEncoder::bind(params, prefix + ".enc", encoder);
  init.trunk_ = nn::DenseLayer::bind(params, prefix + ".trunk");
  init.trajectory_head_ = nn::DenseLayer::bind(params, prefix + ".traj_head");
  init.score_head_ = nn::DenseLayer::bind(params, prefix + ".score_head");
  if (init.trajectory_head_.out != config.modes * config.steps * 2 || init.score_head_.out != config.modes) {
    throw ValidationError("initializer parameters do not match the configuration");
  }
  return init;
}

Initializer::Output Initializer::predict_modes(nn::Graph& g, nn::Var embedding) const {
  using namespace nn;
  const std::size_t batch = g.value(embedding).rows();
  Var h = relu(g, trunk_(g, embedding));
  // B x (K*T*2) -> (B*K) x (T*2): each row is one mode's per-step offsets.
  Var offsets = reshape(g, trajectory_head_(g, h), batch * config_.modes, config_.steps * 2);
  return Output{cumsum_steps(g, offsets, 2), score_head_(g, h)};
}

}  // namespace dragtraffic
