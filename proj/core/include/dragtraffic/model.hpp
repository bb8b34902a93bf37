#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "dragtraffic/diffusion.hpp"
#include "dragtraffic/encoders.hpp"
#include "dragtraffic/initializer.hpp"
#include "dragtraffic/nn/checkpoint.hpp"

namespace dragtraffic {

// Parameter groups of one expert.
inline constexpr const char* kContextEncoderGroup = "context_encoder";
inline constexpr const char* kNoiseEstimatorGroup = "noise_estimator";
inline constexpr const char* kInitializerGroup = "initializer";

struct ModelConfig {
  AgentType agent_type = AgentType::Vehicle;
  EncoderConfig encoder;
  InitializerConfig initializer;
  NoiseEstimatorConfig estimator;
  std::size_t diffusion_steps = 100;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::size_t refine_depth = 5;
  double position_scale = 10.0;  ///< metres per model unit
  bool refine_noise = true;      ///< stage-2 training draws z in every reverse step
  bool sample_noise = false;     ///< inference draws z as well; off gives the mean update

  std::size_t trajectory_width() const { return initializer.steps * 2; }
  DiffusionSchedule schedule() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown agent types throw.
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Agent-centric network input for one agent.
struct AgentInput {
  std::int64_t agent_id = 0;
  AgentFrame frame;
  VectorizedScene scene;
  std::vector<double> condition;
};

/// Transforms into the agent's frame, vectorizes and builds the condition row
/// (valid flag cleared when no condition is given).
AgentInput prepare_agent(const Scenario& scenario, std::int64_t agent_id, const std::optional<ConditionContext>& condition,
                         const EncoderConfig& config);

struct ModelOutput {
  TrajectoryBatch initial;  ///< initializer output, agent frame, metres
  TrajectoryBatch refined;  ///< after the reverse steps
};

/// Called after each reverse step with (completed, total).
using RefineProgress = std::function<void(std::size_t, std::size_t)>;

/// Initializer + context encoder + noise estimator for one agent type.
class ExpertModel {
 public:
  struct GraphOutput {
    nn::Var initial;  ///< (B*K) x width, model units
    nn::Var refined;
    nn::Var scores;   ///< B x K
  };

  static ExpertModel create(const ModelConfig& config, std::uint64_t seed);
  static ExpertModel from_checkpoint(nn::Checkpoint ckpt);
  static ExpertModel load(const std::filesystem::path& path);
  /// Metadata carries the model config, schedule and `extra` keys.
  nn::Checkpoint to_checkpoint(std::int64_t step, const nlohmann::json& extra = nlohmann::json::object()) const;
  void save(const std::filesystem::path& path, std::int64_t step,
            const nlohmann::json& extra = nlohmann::json::object()) const;

  const ModelConfig& config() const { return config_; }
  const DiffusionSchedule& schedule() const { return schedule_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const ContextEncoder& context_encoder() const { return context_encoder_; }
  const NoiseEstimator& estimator() const { return estimator_; }
  const Initializer& initializer() const { return initializer_; }
  /// Metadata stored with the checkpoint this model was loaded from.
  const nlohmann::json& metadata() const { return metadata_; }
  nlohmann::json& metadata() { return metadata_; }

  /// Denoiser context projected for the estimator: B x hidden.
  nn::Var denoiser_context(nn::Graph& g, const SceneBatch& batch) const;
  /// Reverse steps over (B*K) rows; `noise[i]` is z for refine step i (empty
  /// tensors mean z = 0).
  nn::Var refine(nn::Graph& g, nn::Var tau_star, nn::Var context_rows, std::span<const nn::Tensor> noise,
                 const RefineProgress& progress = {}) const;
  GraphOutput forward(nn::Graph& g, const SceneBatch& batch, std::span<const nn::Tensor> noise) const;

  /// z for one sample: refine_depth tensors of K x width drawn from `rng`.
  std::vector<nn::Tensor> draw_noise(Rng& rng) const;
  /// Stacks per-sample draws into per-step (B*K) x width tensors.
  static std::vector<nn::Tensor> stack_noise(std::span<const std::vector<nn::Tensor>> per_sample);

  /// Inference for a batch of agents. `rngs` supplies one stream per input for
  /// the reverse-step noise; ignored when sample_noise is off.
  std::vector<ModelOutput> predict(std::span<const AgentInput> inputs, std::span<Rng> rngs,
                                   const RefineProgress& progress = {}) const;

 private:
  void bind();

  ModelConfig config_;
  DiffusionSchedule schedule_;
  nn::ParamStore params_;
  nlohmann::json metadata_ = nlohmann::json::object();
  ContextEncoder context_encoder_;
  NoiseEstimator estimator_;
  Initializer initializer_;
};

}  // namespace dragtraffic
