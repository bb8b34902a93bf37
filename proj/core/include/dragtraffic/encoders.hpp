#pragma once

#include <array>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dragtraffic/nn/graph.hpp"
#include "dragtraffic/nn/layers.hpp"
#include "dragtraffic/rng.hpp"
#include "dragtraffic/scene.hpp"

namespace dragtraffic {

struct EncoderConfig {
  std::size_t history_len = 1;
  std::size_t max_agents = kMaxAgents;
  std::size_t max_lane_segments = 96;
  std::size_t hidden = 64;             ///< width of the state, agent and lane pathways
  std::size_t mcg_blocks = 3;          ///< stacked blocks per set encoder
  std::size_t condition_hidden = 1024;
  std::size_t embedding = 1024;

  VectorizeOptions vectorize_options() const { return {history_len, max_agents, max_lane_segments}; }
};

/// Fixed-length scene embedding for one agent.
struct ContextEmbedding {
  std::vector<double> values;
};

/// Multi-context gating block: every element is gated by a projection of the
/// shared context, and the new context is the max-pool of the gated elements.
struct McgBlock {
  nn::DenseLayer element;
  nn::DenseLayer context;

  static McgBlock create(nn::ParamStore& params, const std::string& name, const std::string& group,
                         std::size_t width, Rng& rng);
  static McgBlock bind(const nn::ParamStore& params, const std::string& name);
};

/// elements: (B*set_size) x width, context: B x width.
/// Returns (gated elements, updated context). Throws ValidationError when a set
/// has no unmasked element.
std::pair<nn::Var, nn::Var> mcg_forward(nn::Graph& g, const McgBlock& block, nn::Var elements, nn::Var context,
                                        std::span<const std::uint8_t> mask, std::size_t set_size);

/// Batched, scaled network inputs for B scenes.
struct SceneBatch {
  std::size_t batch = 0;
  std::size_t agents_per_scene = 0;
  std::size_t lanes_per_scene = 0;
  nn::Tensor target;      ///< B x (history_len * kAgentFeatures)
  nn::Tensor agents;      ///< (B*agents_per_scene) x (history_len * kAgentFeatures)
  std::vector<std::uint8_t> agent_mask;
  nn::Tensor lanes;       ///< (B*lanes_per_scene) x kLaneFeatures
  std::vector<std::uint8_t> lane_mask;
  nn::Tensor conditions;  ///< B x kConditionDim

  /// Throws ValidationError when a condition row is not 8-dimensional or the
  /// scenes disagree on padding.
  static SceneBatch stack(std::span<const VectorizedScene* const> scenes,
                          std::span<const std::vector<double>> conditions);
};

/// State encoder + agent MCG stack + lane MCG stack + condition MLP, concatenated
/// and projected to the embedding width.
class ContextEncoder {
 public:
  static ContextEncoder create(nn::ParamStore& params, const std::string& prefix, const std::string& group,
                               const EncoderConfig& config, Rng& rng);
  static ContextEncoder bind(const nn::ParamStore& params, const std::string& prefix, const EncoderConfig& config);

  /// Returns B x embedding.
  nn::Var encode(nn::Graph& g, const SceneBatch& batch) const;
  const EncoderConfig& config() const { return config_; }

 private:
  EncoderConfig config_;
  nn::DenseLayer target_in_, target_out_;
  nn::DenseLayer agent_in_, lane_in_;
  std::vector<McgBlock> agent_blocks_, lane_blocks_;
  nn::DenseLayer condition_;
  nn::DenseLayer project_;
};

}  // namespace dragtraffic
