#include "dragtraffic/encoders.hpp"

#include <algorithm>

#include "dragtraffic/error.hpp"
#include "dragtraffic/nn/ops.hpp"

namespace dragtraffic {

namespace {

// Per-feature input scaling: metres and m/s by 10, length by 5, width by 2.
constexpr std::array<double, kAgentFeatures> kAgentScale = {0.1, 0.1, 0.1, 0.1, 1, 1, 0.2, 0.5, 1, 1, 1};
constexpr std::array<double, kLaneFeatures> kLaneScale = {0.1, 0.1, 1, 1, 1, 1, 1, 1};
constexpr std::array<double, kConditionDim> kConditionScale = {0.1, 0.1, 0.1, 1, 1, 0.2, 0.5, 1};

void copy_scaled_agent_row(const nn::Tensor& src, std::size_t src_row, nn::Tensor& dst, std::size_t dst_row) {
  for (std::size_t j = 0; j < src.cols(); ++j) dst(dst_row, j) = src(src_row, j) * kAgentScale[j % kAgentFeatures];
}

}  // namespace

McgBlock McgBlock::create(nn::ParamStore& params, const std::string& name, const std::string& group,
                          std::size_t width, Rng& rng) {
  return McgBlock{nn::DenseLayer::create(params, name + ".elem", group, width, width, rng),
                  nn::DenseLayer::create(params, name + ".ctx", group, width, width, rng)};
}

McgBlock McgBlock::bind(const nn::ParamStore& params, const std::string& name) {
  return McgBlock{nn::DenseLayer::bind(params, name + ".elem"), nn::DenseLayer::bind(params, name + ".ctx")};
}

std::pair<nn::Var, nn::Var> mcg_forward(nn::Graph& g, const McgBlock& block, nn::Var elements, nn::Var context,
                                        std::span<const std::uint8_t> mask, std::size_t set_size) {
  nn::Var e = nn::relu(g, block.element(g, elements));
  nn::Var c = nn::relu(g, block.context(g, context));
  nn::Var gated = nn::mul(g, e, nn::repeat_rows(g, c, set_size));
  nn::Var pooled = nn::max_pool_over_set(g, gated, mask, set_size);
  return {gated, pooled};
}

SceneBatch SceneBatch::stack(std::span<const VectorizedScene* const> scenes,
                             std::span<const std::vector<double>> conditions) {
  if (scenes.empty()) throw ValidationError("empty scene batch");
  if (conditions.size() != scenes.size()) throw ValidationError("one condition row per scene required");
  SceneBatch b;
  b.batch = scenes.size();
  const VectorizedScene& first = *scenes[0];
  b.agents_per_scene = first.agents.rows();
  b.lanes_per_scene = first.lanes.rows();
  const std::size_t width = first.agents.cols();
  b.target = nn::Tensor::matrix(b.batch, width);
  b.agents = nn::Tensor::matrix(b.batch * b.agents_per_scene, width);
  b.lanes = nn::Tensor::matrix(b.batch * b.lanes_per_scene, kLaneFeatures);
  b.conditions = nn::Tensor::matrix(b.batch, kConditionDim);
  for (std::size_t i = 0; i < b.batch; ++i) {
    const VectorizedScene& s = *scenes[i];
    if (s.agents.rows() != b.agents_per_scene || s.agents.cols() != width || s.lanes.rows() != b.lanes_per_scene) {
      throw ValidationError("scenes in a batch must share padding");
    }
    if (conditions[i].size() != kConditionDim) {
      throw ValidationError("condition must have " + std::to_string(kConditionDim) + " entries, got " +
                            std::to_string(conditions[i].size()));
    }
    copy_scaled_agent_row(s.agents, 0, b.target, i);
    for (std::size_t r = 0; r < b.agents_per_scene; ++r) {
      copy_scaled_agent_row(s.agents, r, b.agents, i * b.agents_per_scene + r);
    }
    b.agent_mask.insert(b.agent_mask.end(), s.agent_mask.begin(), s.agent_mask.end());
    const bool any_lane = std::any_of(s.lane_mask.begin(), s.lane_mask.end(), [](std::uint8_t m) { return m != 0; });
    for (std::size_t r = 0; r < b.lanes_per_scene; ++r) {
      for (std::size_t j = 0; j < kLaneFeatures; ++j) {
        b.lanes(i * b.lanes_per_scene + r, j) = s.lanes(r, j) * kLaneScale[j];
      }
      // A map without segments pools over one all-zero placeholder row.
      b.lane_mask.push_back(any_lane ? s.lane_mask[r] : static_cast<std::uint8_t>(r == 0));
    }
    for (std::size_t j = 0; j < kConditionDim; ++j) b.conditions(i, j) = conditions[i][j] * kConditionScale[j];
  }
  return b;
}

ContextEncoder ContextEncoder::create(nn::ParamStore& params, const std::string& prefix, const std::string& group,
                                      const EncoderConfig& config, Rng& rng) {
  using nn::DenseLayer;
  ContextEncoder enc;
  enc.config_ = config;
  const std::size_t in = config.history_len * kAgentFeatures;
  const std::size_t h = config.hidden;
  enc.target_in_ = DenseLayer::create(params, prefix + ".target.0", group, in, h, rng);
  enc.target_out_ = DenseLayer::create(params, prefix + ".target.1", group, h, h, rng);
  enc.agent_in_ = DenseLayer::create(params, prefix + ".agents.in", group, in, h, rng);
  enc.lane_in_ = DenseLayer::create(params, prefix + ".lanes.in", group, kLaneFeatures, h, rng);
  for (std::size_t k = 0; k < config.mcg_blocks; ++k) {
    enc.agent_blocks_.push_back(McgBlock::create(params, prefix + ".agents.mcg" + std::to_string(k), group, h, rng));
    enc.lane_blocks_.push_back(McgBlock::create(params, prefix + ".lanes.mcg" + std::to_string(k), group, h, rng));
  }
  enc.condition_ = DenseLayer::create(params, prefix + ".condition", group, kConditionDim, config.condition_hidden, rng);
  enc.project_ = DenseLayer::create(params, prefix + ".project", group, 3 * h + config.condition_hidden,
                                    config.embedding, rng);
  return enc;
}

ContextEncoder ContextEncoder::bind(const nn::ParamStore& params, const std::string& prefix,
                                    const EncoderConfig& config) {
  using nn::DenseLayer;
  ContextEncoder enc;
  enc.config_ = config;
  enc.target_in_ = DenseLayer::bind(params, prefix + ".target.0");
  enc.target_out_ = DenseLayer::bind(params, prefix + ".target.1");
  enc.agent_in_ = DenseLayer::bind(params, prefix + ".agents.in");
  enc.lane_in_ = DenseLayer::bind(params, prefix + ".lanes.in");
  for (std::size_t k = 0; k < config.mcg_blocks; ++k) {
    enc.agent_blocks_.push_back(McgBlock::bind(params, prefix + ".agents.mcg" + std::to_string(k)));
    enc.lane_blocks_.push_back(McgBlock::bind(params, prefix + ".lanes.mcg" + std::to_string(k)));
  }
  enc.condition_ = DenseLayer::bind(params, prefix + ".condition");
  enc.project_ = DenseLayer::bind(params, prefix + ".project");
  if (enc.project_.out != config.embedding || enc.condition_.out != config.condition_hidden) {
    throw ValidationError("encoder '" + prefix + "' parameters do not match the configuration");
  }
  return enc;
}

nn::Var ContextEncoder::encode(nn::Graph& g, const SceneBatch& batch) const {
  using namespace nn;
  Var target = relu(g, target_out_(g, relu(g, target_in_(g, g.constant(batch.target)))));

  Var agents = relu(g, agent_in_(g, g.constant(batch.agents)));
  Var agent_ctx = target;
  for (const auto& block : agent_blocks_) {
    std::tie(agents, agent_ctx) = mcg_forward(g, block, agents, agent_ctx, batch.agent_mask, batch.agents_per_scene);
  }

  Var lanes = relu(g, lane_in_(g, g.constant(batch.lanes)));
  Var lane_ctx = target;
  for (const auto& block : lane_blocks_) {
    std::tie(lanes, lane_ctx) = mcg_forward(g, block, lanes, lane_ctx, batch.lane_mask, batch.lanes_per_scene);
  }

  Var condition = relu(g, condition_(g, g.constant(batch.conditions)));
  const Var parts[] = {target, agent_ctx, lane_ctx, condition};
  return project_(g, layernorm(g, concat(g, parts)));
}

}  // namespace dragtraffic
