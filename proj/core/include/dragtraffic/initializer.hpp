#pragma once

#include <span>
#include <string>
#include <vector>

#include "dragtraffic/encoders.hpp"
#include "dragtraffic/nn/graph.hpp"
#include "dragtraffic/scene.hpp"

namespace dragtraffic {

inline constexpr std::size_t kModes = 6;

/// K candidate futures (positions in the agent frame, metres) with scores.
struct TrajectoryBatch {
  std::vector<std::vector<Vec2>> modes;
  std::vector<double> scores;

  std::size_t mode_count() const { return modes.size(); }
  std::size_t steps() const { return modes.empty() ? 0 : modes.front().size(); }
  std::vector<double> probabilities() const;
  /// Highest score; the lowest index wins ties.
  std::size_t best_mode() const;
  friend bool operator==(const TrajectoryBatch&, const TrajectoryBatch&) = default;
};

/// Rows of a (K x steps*2) tensor in model units, scaled back to metres.
TrajectoryBatch to_trajectory_batch(const nn::Tensor& modes, std::span<const double> scores, double position_scale);

struct ClosestMode {
  double loss = 0.0;  ///< mean squared displacement of the chosen mode, m^2
  std::size_t index = 0;
};

/// Picks the mode with the smallest average displacement (lowest index on ties)
/// and returns its mean squared displacement. Throws ValidationError when the
/// ground truth length differs from the mode length.
ClosestMode closest_mode_mse(const TrajectoryBatch& batch, std::span<const Vec2> ground_truth);

/// -log softmax(scores)[index]; throws ValidationError for an out-of-range index.
double score_nll(const TrajectoryBatch& batch, std::size_t index);

struct InitializerConfig {
  std::size_t modes = kModes;
  std::size_t steps = kFutureSteps;
  std::size_t trunk = 256;
};

/// Regression initializer: its own context encoder, a shared trunk, K trajectory
/// heads emitting per-step offsets that are integrated from the origin, and a
/// score head.
class Initializer {
 public:
  struct Output {
    nn::Var trajectories;  ///< (B*K) x (steps*2), model units
    nn::Var scores;        ///< B x K
  };

  static Initializer create(nn::ParamStore& params, const std::string& prefix, const std::string& group,
                            const EncoderConfig& encoder, const InitializerConfig& config, Rng& rng);
  static Initializer bind(const nn::ParamStore& params, const std::string& prefix, const EncoderConfig& encoder,
                          const InitializerConfig& config);

  const ContextEncoder& encoder() const { return encoder_; }
  const InitializerConfig& config() const { return config_; }
  /// Parameter names of the two output heads.
  const nn::DenseLayer& trajectory_head() const { return trajectory_head_; }
  const nn::DenseLayer& score_head() const { return score_head_; }

  Output predict_modes(nn::Graph& g, nn::Var embedding) const;

 private:
  InitializerConfig config_;
  ContextEncoder encoder_;
  nn::DenseLayer trunk_;
  nn::DenseLayer trajectory_head_;
  nn::DenseLayer score_head_;
};

}  // namespace dragtraffic
