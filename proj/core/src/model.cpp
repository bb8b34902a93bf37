#include "dragtraffic/model.hpp"

#include "dragtraffic/error.hpp"
#include "dragtraffic/nn/ops.hpp"

namespace dragtraffic {

namespace {

constexpr const char* kContextPrefix = "ctx";
constexpr const char* kEstimatorPrefix = "den";
constexpr const char* kInitializerPrefix = "init";

template <typename T>
void read_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

DiffusionSchedule ModelConfig::schedule() const {
  return DiffusionSchedule::linear(diffusion_steps, beta_start, beta_end, refine_depth);
}

nlohmann::json ModelConfig::to_json() const {
  return {
      {"agent_type", std::string(to_string(agent_type))},
      {"encoder",
       {{"history_len", encoder.history_len},
        {"max_agents", encoder.max_agents},
        {"max_lane_segments", encoder.max_lane_segments},
        {"hidden", encoder.hidden},
        {"mcg_blocks", encoder.mcg_blocks},
        {"condition_hidden", encoder.condition_hidden},
        {"embedding", encoder.embedding}}},
      {"initializer", {{"modes", initializer.modes}, {"steps", initializer.steps}, {"trunk", initializer.trunk}}},
      {"estimator", {{"hidden", estimator.hidden}, {"step_embedding", estimator.step_embedding}}},
      {"diffusion_steps", diffusion_steps},
      {"beta_start", beta_start},
      {"beta_end", beta_end},
      {"refine_depth", refine_depth},
      {"position_scale", position_scale},
      {"refine_noise", refine_noise},
      {"sample_noise", sample_noise},
  };
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  if (j.contains("agent_type")) c.agent_type = parse_agent_type(j.at("agent_type").get<std::string>());
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    read_if(e, "history_len", c.encoder.history_len);
    read_if(e, "max_agents", c.encoder.max_agents);
    read_if(e, "max_lane_segments", c.encoder.max_lane_segments);
    read_if(e, "hidden", c.encoder.hidden);
    read_if(e, "mcg_blocks", c.encoder.mcg_blocks);
    read_if(e, "condition_hidden", c.encoder.condition_hidden);
    read_if(e, "embedding", c.encoder.embedding);
  }
  if (j.contains("initializer")) {
    const auto& i = j.at("initializer");
    read_if(i, "modes", c.initializer.modes);
    read_if(i, "steps", c.initializer.steps);
    read_if(i, "trunk", c.initializer.trunk);
  }
  if (j.contains("estimator")) {
    read_if(j.at("estimator"), "hidden", c.estimator.hidden);
    read_if(j.at("estimator"), "step_embedding", c.estimator.step_embedding);
  }
  read_if(j, "diffusion_steps", c.diffusion_steps);
  read_if(j, "beta_start", c.beta_start);
  read_if(j, "beta_end", c.beta_end);
  read_if(j, "refine_depth", c.refine_depth);
  read_if(j, "position_scale", c.position_scale);
  read_if(j, "refine_noise", c.refine_noise);
  read_if(j, "sample_noise", c.sample_noise);
  if (c.position_scale <= 0.0) throw ValidationError("position_scale must be positive");
  return c;
}

AgentInput prepare_agent(const Scenario& scenario, std::int64_t agent_id, const std::optional<ConditionContext>& condition,
                         const EncoderConfig& config) {
  AgentInput in;
  in.agent_id = agent_id;
  auto [local, frame] = to_agent_frame(scenario, agent_id);
  in.frame = frame;
  in.scene = vectorize(local, config.vectorize_options());
  const auto row = condition_vector(condition.value_or(ConditionContext{}), frame);
  in.condition.assign(row.begin(), row.end());
  return in;
}

ExpertModel ExpertModel::create(const ModelConfig& config, std::uint64_t seed) {
  ExpertModel m;
  m.config_ = config;
  m.schedule_ = config.schedule();
  Rng rng(seed);
  ContextEncoder::create(m.params_, kContextPrefix, kContextEncoderGroup, config.encoder, rng);
  NoiseEstimator::create(m.params_, kEstimatorPrefix, kNoiseEstimatorGroup, config.trajectory_width(),
                         config.encoder.embedding, config.estimator, rng);
  Initializer::create(m.params_, kInitializerPrefix, kInitializerGroup, config.encoder, config.initializer, rng);
  m.bind();
  return m;
}

void ExpertModel::bind() {
  context_encoder_ = ContextEncoder::bind(params_, kContextPrefix, config_.encoder);
  estimator_ = NoiseEstimator::bind(params_, kEstimatorPrefix, config_.estimator);
  initializer_ = Initializer::bind(params_, kInitializerPrefix, config_.encoder, config_.initializer);
  if (estimator_.trajectory_width() != config_.trajectory_width()) {
    throw ValidationError("noise estimator width does not match the trajectory length");
  }
}

ExpertModel ExpertModel::from_checkpoint(nn::Checkpoint ckpt) {
  if (!ckpt.metadata.contains("model")) throw ValidationError("checkpoint has no model configuration");
  ExpertModel m;
  m.config_ = ModelConfig::from_json(ckpt.metadata.at("model"));
  m.schedule_ = m.config_.schedule();
  if (ckpt.metadata.contains("schedule") && ckpt.metadata.at("schedule").contains("betas")) {
    m.schedule_ = DiffusionSchedule::from_betas(ckpt.metadata.at("schedule").at("betas").get<std::vector<double>>(),
                                                m.config_.refine_depth);
  }
  m.params_ = std::move(ckpt.params);
  m.metadata_ = std::move(ckpt.metadata);
  m.bind();
  return m;
}

ExpertModel ExpertModel::load(const std::filesystem::path& path) { return from_checkpoint(nn::load_checkpoint(path)); }

nn::Checkpoint ExpertModel::to_checkpoint(std::int64_t step, const nlohmann::json& extra) const {
  nn::Checkpoint ckpt;
  ckpt.params = params_;
  ckpt.step = step;
  ckpt.metadata = metadata_;
  for (const auto& [k, v] : extra.items()) ckpt.metadata[k] = v;
  ckpt.metadata["model"] = config_.to_json();
  ckpt.metadata["schedule"] = {{"betas", schedule_.betas}, {"refine_steps", schedule_.refine_steps}};
  return ckpt;
}

void ExpertModel::save(const std::filesystem::path& path, std::int64_t step, const nlohmann::json& extra) const {
  nn::save_checkpoint(path, to_checkpoint(step, extra));
}

nn::Var ExpertModel::denoiser_context(nn::Graph& g, const SceneBatch& batch) const {
  return estimator_.project_context(g, context_encoder_.encode(g, batch));
}

nn::Var ExpertModel::refine(nn::Graph& g, nn::Var tau_star, nn::Var context_rows, std::span<const nn::Tensor> noise,
                            const RefineProgress& progress) const {
  if (!noise.empty() && noise.size() != schedule_.refine_depth()) {
    throw ValidationError("one noise tensor per refine step required");
  }
  nn::Var tau = tau_star;
  const std::size_t total = schedule_.refine_depth();
  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t gamma = schedule_.refine_steps[i];
    nn::Var eps = estimator_.estimate(g, tau, context_rows, gamma + 1);
    tau = denoise_step(g, schedule_, tau, gamma, eps, noise.empty() ? nn::Tensor() : noise[i]);
    if (progress) progress(i + 1, total);
  }
  return tau;
}

ExpertModel::GraphOutput ExpertModel::forward(nn::Graph& g, const SceneBatch& batch,
                                              std::span<const nn::Tensor> noise) const {
  const auto init = initializer_.predict_modes(g, initializer_.encoder().encode(g, batch));
  nn::Var ctx_rows = nn::repeat_rows(g, denoiser_context(g, batch), config_.initializer.modes);
  return GraphOutput{init.trajectories, refine(g, init.trajectories, ctx_rows, noise), init.scores};
}

std::vector<nn::Tensor> ExpertModel::draw_noise(Rng& rng) const {
  std::vector<nn::Tensor> out;
  for (std::size_t i = 0; i < schedule_.refine_depth(); ++i) {
    nn::Tensor z = nn::Tensor::matrix(config_.initializer.modes, config_.trajectory_width());
    for (std::size_t k = 0; k < z.size(); ++k) z[k] = rng.normal();
    out.push_back(std::move(z));
  }
  return out;
}

std::vector<nn::Tensor> ExpertModel::stack_noise(std::span<const std::vector<nn::Tensor>> per_sample) {
  std::vector<nn::Tensor> out;
  if (per_sample.empty()) return out;
  const std::size_t steps = per_sample.front().size();
  for (std::size_t i = 0; i < steps; ++i) {
    const nn::Tensor& first = per_sample.front()[i];
    nn::Tensor z = nn::Tensor::matrix(first.rows() * per_sample.size(), first.cols());
    std::size_t offset = 0;
    for (const auto& sample : per_sample) {
      std::copy(sample[i].raw(), sample[i].raw() + sample[i].size(), z.raw() + offset);
      offset += sample[i].size();
    }
    out.push_back(std::move(z));
  }
  return out;
}

std::vector<ModelOutput> ExpertModel::predict(std::span<const AgentInput> inputs, std::span<Rng> rngs,
                                              const RefineProgress& progress) const {
  if (inputs.empty()) return {};
  if (config_.sample_noise && rngs.size() != inputs.size()) {
    throw ValidationError("one random stream per agent required");
  }
  std::vector<const VectorizedScene*> scenes;
  std::vector<std::vector<double>> conditions;
  std::vector<std::vector<nn::Tensor>> draws;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    scenes.push_back(&inputs[i].scene);
    conditions.push_back(inputs[i].condition);
    if (config_.sample_noise) draws.push_back(draw_noise(rngs[i]));
  }
  const SceneBatch batch = SceneBatch::stack(scenes, conditions);
  const std::vector<nn::Tensor> noise = stack_noise(draws);

  nn::Graph g(&params_);
  const auto init = initializer_.predict_modes(g, initializer_.encoder().encode(g, batch));
  nn::Var ctx_rows = nn::repeat_rows(g, denoiser_context(g, batch), config_.initializer.modes);
  nn::Var refined = refine(g, init.trajectories, ctx_rows, noise, progress);

  const std::size_t k = config_.initializer.modes;
  const std::size_t width = config_.trajectory_width();
  const nn::Tensor& init_v = g.value(init.trajectories);
  const nn::Tensor& ref_v = g.value(refined);
  const nn::Tensor& scores = g.value(init.scores);
  std::vector<ModelOutput> out;
  for (std::size_t b = 0; b < inputs.size(); ++b) {
    nn::Tensor a = nn::Tensor::matrix(k, width);
    nn::Tensor r = nn::Tensor::matrix(k, width);
    std::copy(init_v.raw() + b * k * width, init_v.raw() + (b + 1) * k * width, a.raw());
    std::copy(ref_v.raw() + b * k * width, ref_v.raw() + (b + 1) * k * width, r.raw());
    const std::span<const double> s(scores.raw() + b * k, k);
    out.push_back({to_trajectory_batch(a, s, config_.position_scale), to_trajectory_batch(r, s, config_.position_scale)});
  }
  return out;
}

}  // namespace dragtraffic
