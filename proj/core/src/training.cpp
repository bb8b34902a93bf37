#include "dragtraffic/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "dragtraffic/dataio.hpp"
#include "dragtraffic/error.hpp"
#include "dragtraffic/nn/ops.hpp"
#include "dragtraffic/nn/optim.hpp"

namespace dragtraffic {

namespace {

constexpr std::uint64_t kSampleStream = 0x51a7e5ULL;

struct Batch {
  SceneBatch scene;
  nn::Tensor tau0;     ///< B x width, model units
  nn::Tensor mask;     ///< B x width, 1 for valid coordinates
  nn::Tensor weights;  ///< mask / number of valid steps per row
};

Batch make_batch(const ExpertModel& model, std::span<const TrainingExample> data, std::span<const std::size_t> index,
                 std::span<const std::uint8_t> conditioned) {
  const std::size_t width = model.config().trajectory_width();
  const double scale = model.config().position_scale;
  std::vector<const VectorizedScene*> scenes;
  std::vector<std::vector<double>> conditions;
  Batch b;
  b.tau0 = nn::Tensor::matrix(index.size(), width);
  b.mask = nn::Tensor::matrix(index.size(), width);
  b.weights = nn::Tensor::matrix(index.size(), width);
  for (std::size_t r = 0; r < index.size(); ++r) {
    const TrainingExample& ex = data[index[r]];
    if (ex.future.size() != width) throw ShapeError("example '" + ex.id + "' does not match the model horizon");
    scenes.push_back(&ex.input.scene);
    conditions.push_back(conditioned[r] ? ex.input.condition : std::vector<double>(kConditionDim, 0.0));
    const std::size_t valid = static_cast<std::size_t>(std::count(ex.valid.begin(), ex.valid.end(), 1));
    for (std::size_t c = 0; c < width; ++c) {
      b.tau0(r, c) = ex.future[c] / scale;
      const double m = ex.valid[c / 2] ? 1.0 : 0.0;
      b.mask(r, c) = m;
      b.weights(r, c) = valid ? m / static_cast<double>(valid) : 0.0;
    }
  }
  b.scene = SceneBatch::stack(scenes, conditions);
  return b;
}

/// Mode per row with the smallest mean displacement over valid steps.
std::vector<std::size_t> closest_rows(const nn::Tensor& modes, const Batch& b, std::size_t k) {
  const std::size_t width = modes.cols();
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < b.tau0.rows(); ++r) {
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t m = 0; m < k; ++m) {
      double d = 0.0;
      for (std::size_t c = 0; c < width; c += 2) {
        if (b.mask(r, c) == 0.0) continue;
        d += std::hypot(modes(r * k + m, c) - b.tau0(r, c), modes(r * k + m, c + 1) - b.tau0(r, c + 1));
      }
      if (d < best_d) {
        best_d = d;
        best = m;
      }
    }
    rows.push_back(r * k + best);
  }
  return rows;
}

struct RegressionTerms {
  nn::Var mse;
  nn::Var nll;
};

RegressionTerms regression_terms(nn::Graph& g, nn::Var modes, nn::Var scores, const Batch& b, std::size_t k) {
  const std::vector<std::size_t> rows = closest_rows(g.value(modes), b, k);
  std::vector<std::size_t> picks;
  for (std::size_t r = 0; r < rows.size(); ++r) picks.push_back(rows[r] - r * k);
  nn::Var diff = nn::sub(g, nn::gather_rows(g, modes, rows), g.constant(b.tau0));
  nn::Var mse = nn::mean(g, nn::row_sum(g, nn::mul(g, nn::square(g, diff), g.constant(b.weights))));
  nn::Var nll = nn::scale(g, nn::mean(g, nn::pick(g, nn::log_softmax(g, scores), picks)), -1.0);
  return {mse, nll};
}

Rng sample_rng(std::uint64_t seed, std::size_t epoch, std::size_t example) {
  return Rng(seed).derive(kSampleStream).derive(epoch).derive(example);
}

std::vector<nn::Tensor> batch_noise(const ExpertModel& model, std::uint64_t seed, std::size_t epoch,
                                    std::span<const std::size_t> index) {
  if (!model.config().refine_noise) return {};
  std::vector<std::vector<nn::Tensor>> draws;
  for (std::size_t i : index) {
    Rng rng = sample_rng(seed, epoch, i).derive(1);
    draws.push_back(model.draw_noise(rng));
  }
  return ExpertModel::stack_noise(draws);
}

/// Returns the loss node; fills mse/nll for logging.
using StepFn = std::function<nn::Var(nn::Graph&, std::size_t epoch, std::span<const std::size_t> index,
                                     double& mse, double& nll)>;

TrainResult run_epochs(ExpertModel& model, std::span<const TrainingExample> data, const TrainConfig& config,
                       const EpochCallback& on_epoch, const StepFn& step) {
  if (data.empty()) throw ValidationError("training dataset is empty");
  if (config.batch_size == 0) throw ValidationError("batch size must be positive");
  const std::size_t epochs = config.resolved_epochs();
  const std::size_t batches = (data.size() + config.batch_size - 1) / config.batch_size;
  const nn::LinearDecay lr(config.lr_start, config.lr_end, static_cast<std::int64_t>(epochs * batches));
  nn::AdamState adam;
  TrainResult result;
  std::vector<std::size_t> order(data.size());
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle = Rng(config.seed).derive(epoch);
    std::shuffle(order.begin(), order.end(), shuffle.engine());
    EpochLog log;
    log.epoch = epoch + 1;
    log.lr = lr(result.steps);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - start);
      const std::span<const std::size_t> index(order.data() + start, n);
      nn::Graph g(&model.params());
      double mse = 0.0;
      double nll = 0.0;
      nn::Var loss = step(g, epoch, index, mse, nll);
      const double value = g.value(loss)[0];
      if (!std::isfinite(value)) throw NumericError("non-finite training loss in epoch " + std::to_string(epoch + 1));
      nn::adam_step(model.params(), g.backward(loss), adam, lr(result.steps));
      ++result.steps;
      const double w = static_cast<double>(n) / static_cast<double>(data.size());
      log.loss += value * w;
      log.mse += mse * w;
      log.nll += nll * w;
    }
    result.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
  }

  auto& meta = model.metadata();
  meta["stages"].push_back(std::string(to_string(config.stage)));
  std::set<std::string> sources;
  if (meta.contains("train_sources")) {
    for (const auto& s : meta["train_sources"]) sources.insert(s.get<std::string>());
  }
  for (const auto& ex : data) sources.insert(ex.source_id);
  meta["train_sources"] = sources;
  meta["train_steps"] = meta.value("train_steps", std::int64_t{0}) + result.steps;
  return result;
}

std::vector<std::uint8_t> condition_flags(const TrainConfig& config, std::size_t epoch,
                                          std::span<const std::size_t> index) {
  std::vector<std::uint8_t> flags;
  for (std::size_t i : index) {
    Rng rng = sample_rng(config.seed, epoch, i).derive(2);
    flags.push_back(rng.bernoulli(config.condition_dropout) ? 0 : 1);
  }
  return flags;
}

nn::Var stage1_loss(nn::Graph& g, const ExpertModel& model, const Batch& b, std::span<Rng> rngs) {
  const DiffusionSchedule& s = model.schedule();
  nn::Tensor eps = nn::Tensor::matrix(b.tau0.rows(), b.tau0.cols());
  nn::Tensor tau = eps;
  std::vector<std::size_t> steps;
  for (std::size_t r = 0; r < b.tau0.rows(); ++r) {
    const auto gamma = static_cast<std::size_t>(rngs[r].uniform_int(0, static_cast<std::int64_t>(s.total_steps()) - 1));
    steps.push_back(gamma + 1);
    const double a = std::sqrt(s.alpha_bars[gamma]);
    const double c = std::sqrt(1.0 - s.alpha_bars[gamma]);
    for (std::size_t k = 0; k < b.tau0.cols(); ++k) {
      eps(r, k) = rngs[r].normal();
      tau(r, k) = a * b.tau0(r, k) + c * eps(r, k);
    }
  }
  nn::Var ctx = model.denoiser_context(g, b.scene);
  nn::Var est = model.estimator().estimate(g, g.constant(tau), ctx, steps);
  nn::Var diff = nn::mul(g, nn::sub(g, g.constant(eps), est), g.constant(b.mask));
  return nn::mean(g, nn::sqrt(g, nn::row_sum(g, nn::square(g, diff))));
}

bool has_stage(const ExpertModel& model, Stage stage) {
  const auto& meta = model.metadata();
  if (!meta.contains("stages")) return false;
  for (const auto& s : meta.at("stages")) {
    if (s.get<std::string>() == to_string(stage)) return true;
  }
  return false;
}

/// Positions restricted to the valid steps of the ground truth.
struct EvalTrack {
  std::vector<Vec2> gt;
  std::vector<std::size_t> steps;
};

EvalTrack eval_track(const Agent& agent, const AgentFrame& frame) {
  if (!agent.future) throw ValidationError("agent " + std::to_string(agent.id) + " has no ground-truth future");
  EvalTrack t;
  for (std::size_t i = 0; i < agent.future->states.size(); ++i) {
    const AgentState& s = agent.future->states[i];
    if (!s.valid) continue;
    t.gt.push_back(frame.to_local(s.position));
    t.steps.push_back(i);
  }
  if (t.gt.size() < 2) {
    throw ValidationError("agent " + std::to_string(agent.id) + " has fewer than two valid future steps");
  }
  return t;
}

TrajectoryBatch restrict(const TrajectoryBatch& batch, const EvalTrack& track) {
  TrajectoryBatch out;
  out.scores = batch.scores;
  for (const auto& mode : batch.modes) {
    if (mode.size() <= track.steps.back()) throw ValidationError("prediction shorter than the ground truth");
    std::vector<Vec2> pts;
    for (std::size_t i : track.steps) pts.push_back(mode[i]);
    out.modes.push_back(std::move(pts));
  }
  return out;
}

struct Accumulator {
  TypeMetrics sum;
  void add(const TrajectoryBatch& refined, const TrajectoryBatch& initial, const EvalTrack& track,
           const std::vector<Vec2>& best_full, const Vec2& gt_end, KinematicAverage average) {
    ++sum.count;
    sum.min_ade += min_ade_k(refined, track.gt);
    sum.min_fde += min_fde_k(refined, track.gt);
    sum.initial_min_ade += min_ade_k(initial, track.gt);
    sum.initial_min_fde += min_fde_k(initial, track.gt);
    const auto& mode = refined.modes[endpoint_closest_mode(refined, track.gt)];
    const KinematicError k = kinematic_error(mode, track.gt, Vec2{}, 0.0, average);
    if (k.degenerate) ++sum.degenerate;
    sum.heading_error += k.heading;
    sum.speed_error += k.speed;
    sum.endpoint_error += (best_full.back() - gt_end).norm();
  }
  TypeMetrics mean() const {
    TypeMetrics m = sum;
    if (m.count == 0) return m;
    const double n = static_cast<double>(m.count);
    for (double* v : {&m.min_ade, &m.min_fde, &m.heading_error, &m.speed_error, &m.endpoint_error,
                      &m.initial_min_ade, &m.initial_min_fde}) {
      *v /= n;
    }
    return m;
  }
};

const Agent& center_agent(const Scenario& record) {
  const Agent& a = record.agent(record.ego_id);
  if (!a.current().valid) throw ValidationError("record '" + record.id + "' has no valid centre agent");
  return a;
}

}  // namespace

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::DenoiserPretrain: return "denoiser_pretrain";
    case Stage::InitializerFinetune: return "initializer_finetune";
    case Stage::BaselineRegression: return "baseline_regression";
  }
  return "unknown";
}

Stage parse_stage(std::string_view tag) {
  if (tag == "denoiser_pretrain" || tag == "1") return Stage::DenoiserPretrain;
  if (tag == "initializer_finetune" || tag == "2") return Stage::InitializerFinetune;
  if (tag == "baseline_regression" || tag == "baseline") return Stage::BaselineRegression;
  throw ValidationError("unknown training stage '" + std::string(tag) + "'");
}

std::size_t default_epochs(Stage stage) {
  switch (stage) {
    case Stage::DenoiserPretrain: return 100;
    case Stage::InitializerFinetune: return 40;
    case Stage::BaselineRegression: return 150;
  }
  return 0;
}

nlohmann::json TrainConfig::to_json() const {
  return {{"stage", std::string(to_string(stage))}, {"epochs", resolved_epochs()}, {"batch_size", batch_size},
          {"lr_start", lr_start},  {"lr_end", lr_end},  {"seed", seed},
          {"condition_dropout", condition_dropout}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (j.contains("stage")) c.stage = parse_stage(j.at("stage").get<std::string>());
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr_start = j.value("lr_start", c.lr_start);
  c.lr_end = j.value("lr_end", c.lr_end);
  c.seed = j.value("seed", c.seed);
  c.condition_dropout = j.value("condition_dropout", c.condition_dropout);
  if (c.batch_size == 0) throw ValidationError("batch_size must be positive");
  if (c.condition_dropout < 0.0 || c.condition_dropout > 1.0) {
    throw ValidationError("condition_dropout must lie in [0, 1]");
  }
  return c;
}

std::vector<TrainingExample> make_examples(std::span<const Scenario> records, const ModelConfig& config) {
  std::vector<TrainingExample> out;
  out.reserve(records.size());
  const std::size_t steps = config.initializer.steps;
  for (const Scenario& record : records) {
    const Agent& agent = center_agent(record);
    if (!agent.future || agent.future->states.size() != steps) {
      throw ValidationError("record '" + record.id + "' has no " + std::to_string(steps) + "-step ground truth");
    }
    TrainingExample ex;
    ex.id = record.id;
    ex.source_id = source_key(record);
    ex.input = prepare_agent(record, agent.id, condition_from_endpoint(agent), config.encoder);
    ex.future.resize(steps * 2);
    ex.valid.resize(steps);
    Vec2 last;
    for (std::size_t t = 0; t < steps; ++t) {
      const AgentState& s = agent.future->states[t];
      ex.valid[t] = s.valid ? 1 : 0;
      if (s.valid) last = ex.input.frame.to_local(s.position);
      ex.future[2 * t] = last.x;
      ex.future[2 * t + 1] = last.y;
    }
    out.push_back(std::move(ex));
  }
  return out;
}

TrainResult train_stage1(ExpertModel& model, std::span<const TrainingExample> data, const TrainConfig& config,
                         const EpochCallback& on_epoch) {
  TrainConfig c = config;
  c.stage = Stage::DenoiserPretrain;
  auto step = [&](nn::Graph& g, std::size_t epoch, std::span<const std::size_t> index, double&, double&) {
    const Batch b = make_batch(model, data, index, condition_flags(c, epoch, index));
    std::vector<Rng> rngs;
    for (std::size_t i : index) rngs.push_back(sample_rng(c.seed, epoch, i).derive(3));
    return stage1_loss(g, model, b, rngs);
  };
  return run_epochs(model, data, c, on_epoch, step);
}

TrainResult train_stage2(ExpertModel& model, std::span<const TrainingExample> data, const TrainConfig& config,
                         const EpochCallback& on_epoch) {
  if (!has_stage(model, Stage::DenoiserPretrain)) {
    throw ValidationError("initializer fine-tuning needs a checkpoint that finished denoiser pre-training");
  }
  TrainConfig c = config;
  c.stage = Stage::InitializerFinetune;
  const std::size_t k = model.config().initializer.modes;
  const double s2 = model.config().position_scale * model.config().position_scale;
  auto step = [&](nn::Graph& g, std::size_t epoch, std::span<const std::size_t> index, double& mse, double& nll) {
    const Batch b = make_batch(model, data, index, condition_flags(c, epoch, index));
    const auto noise = batch_noise(model, c.seed, epoch, index);
    const auto out = model.forward(g, b.scene, noise);
    const auto terms = regression_terms(g, out.refined, out.scores, b, k);
    mse = g.value(terms.mse)[0] * s2;
    nll = g.value(terms.nll)[0];
    return nn::add(g, terms.mse, terms.nll);
  };
  const bool ctx_frozen = model.params().group_frozen(kContextEncoderGroup);
  const bool den_frozen = model.params().group_frozen(kNoiseEstimatorGroup);
  model.params().set_frozen(kContextEncoderGroup, true);
  model.params().set_frozen(kNoiseEstimatorGroup, true);
  TrainResult r;
  try {
    r = run_epochs(model, data, c, on_epoch, step);
  } catch (...) {
    model.params().set_frozen(kContextEncoderGroup, ctx_frozen);
    model.params().set_frozen(kNoiseEstimatorGroup, den_frozen);
    throw;
  }
  model.params().set_frozen(kContextEncoderGroup, ctx_frozen);
  model.params().set_frozen(kNoiseEstimatorGroup, den_frozen);
  return r;
}

TrainResult train_baseline(ExpertModel& model, std::span<const TrainingExample> data, const TrainConfig& config,
                           const EpochCallback& on_epoch) {
  TrainConfig c = config;
  c.stage = Stage::BaselineRegression;
  const std::size_t k = model.config().initializer.modes;
  const double s2 = model.config().position_scale * model.config().position_scale;
  auto step = [&](nn::Graph& g, std::size_t epoch, std::span<const std::size_t> index, double& mse, double& nll) {
    const Batch b = make_batch(model, data, index, condition_flags(c, epoch, index));
    const Initializer& init = model.initializer();
    const auto out = init.predict_modes(g, init.encoder().encode(g, b.scene));
    const auto terms = regression_terms(g, out.trajectories, out.scores, b, k);
    mse = g.value(terms.mse)[0] * s2;
    nll = g.value(terms.nll)[0];
    return nn::add(g, terms.mse, terms.nll);
  };
  return run_epochs(model, data, c, on_epoch, step);
}

TrainResult train(ExpertModel& model, std::span<const TrainingExample> data, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  switch (config.stage) {
    case Stage::DenoiserPretrain: return train_stage1(model, data, config, on_epoch);
    case Stage::InitializerFinetune: return train_stage2(model, data, config, on_epoch);
    case Stage::BaselineRegression: return train_baseline(model, data, config, on_epoch);
  }
  throw ValidationError("unknown training stage");
}

double noise_estimation_loss(const ExpertModel& model, std::span<const TrainingExample> data, std::uint64_t seed) {
  if (data.empty()) throw ValidationError("dataset is empty");
  constexpr std::size_t kChunk = 64;
  double total = 0.0;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, data.size() - start);
    std::vector<std::size_t> index(n);
    std::iota(index.begin(), index.end(), start);
    std::vector<std::uint8_t> flags(n, 1);
    const Batch b = make_batch(model, data, index, flags);
    std::vector<Rng> rngs;
    for (std::size_t i : index) rngs.push_back(Rng(seed).derive(i));
    nn::Graph g(&model.params());
    total += g.value(stage1_loss(g, model, b, rngs))[0] * static_cast<double>(n);
  }
  return total / static_cast<double>(data.size());
}

std::pair<double, double> regression_losses(const ExpertModel& model, std::span<const TrainingExample> data,
                                            bool refine, std::uint64_t seed) {
  if (data.empty()) throw ValidationError("dataset is empty");
  std::vector<std::size_t> index(data.size());
  std::iota(index.begin(), index.end(), 0);
  std::vector<std::uint8_t> flags(data.size(), 1);
  const Batch b = make_batch(model, data, index, flags);
  nn::Graph g(&model.params());
  const std::size_t k = model.config().initializer.modes;
  RegressionTerms terms;
  if (refine) {
    const auto out = model.forward(g, b.scene, batch_noise(model, seed, 0, index));
    terms = regression_terms(g, out.refined, out.scores, b, k);
  } else {
    const Initializer& init = model.initializer();
    const auto out = init.predict_modes(g, init.encoder().encode(g, b.scene));
    terms = regression_terms(g, out.trajectories, out.scores, b, k);
  }
  const double s2 = model.config().position_scale * model.config().position_scale;
  return {g.value(terms.mse)[0] * s2, g.value(terms.nll)[0]};
}

std::string_view to_string(ConditionsPolicy p) {
  return p == ConditionsPolicy::None ? "none" : "from_gt_endpoint";
}

ConditionsPolicy parse_conditions_policy(std::string_view tag) {
  if (tag == "none") return ConditionsPolicy::None;
  if (tag == "from_gt_endpoint") return ConditionsPolicy::FromGtEndpoint;
  throw ValidationError("unknown conditions policy '" + std::string(tag) + "'");
}

nlohmann::json TypeMetrics::to_json() const {
  return {{"count", count},
          {"minADE_6", min_ade},
          {"minFDE_6", min_fde},
          {"heading_error", heading_error},
          {"speed_error", speed_error},
          {"endpoint_error", endpoint_error},
          {"initial_minADE_6", initial_min_ade},
          {"initial_minFDE_6", initial_min_fde},
          {"degenerate", degenerate}};
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  nlohmann::json types = nlohmann::json::object();
  for (const auto& [type, m] : per_type) {
    const nlohmann::json values = m.to_json();
    types[std::string(to_string(type))] = values;
    for (const auto& [metric, v] : values.items()) {
      rows.push_back({{"dataset", std::string(to_string(type))}, {"model", model}, {"metric", metric}, {"value", v}});
    }
  }
  return {{"model", model}, {"conditions", std::string(to_string(conditions))}, {"per_type", types}, {"rows", rows}};
}

EvalReport evaluate(const ExpertModel& model, std::span<const Scenario> records, const EvalOptions& options) {
  if (records.empty()) throw ValidationError("evaluation set is empty");
  if (options.batch_size == 0) throw ValidationError("batch size must be positive");
  if (model.metadata().contains("train_sources")) {
    std::set<std::string> train;
    for (const auto& s : model.metadata().at("train_sources")) train.insert(s.get<std::string>());
    for (const Scenario& r : records) {
      if (train.count(source_key(r))) {
        throw ValidationError("split leakage: record '" + r.id + "' shares source '" + source_key(r) +
                              "' with the training set");
      }
    }
  }
  EvalReport report;
  report.model = model.metadata().value("name", std::string(options.refine ? "dragtraffic" : "regression"));
  report.conditions = options.conditions;
  std::map<AgentType, Accumulator> acc;
  for (std::size_t start = 0; start < records.size(); start += options.batch_size) {
    const std::size_t n = std::min(options.batch_size, records.size() - start);
    std::vector<AgentInput> inputs;
    std::vector<Rng> rngs;
    for (std::size_t i = start; i < start + n; ++i) {
      const Agent& agent = center_agent(records[i]);
      std::optional<ConditionContext> cond;
      if (options.conditions == ConditionsPolicy::FromGtEndpoint) cond = condition_from_endpoint(agent);
      inputs.push_back(prepare_agent(records[i], agent.id, cond, model.config().encoder));
      rngs.push_back(Rng(options.seed).derive(i));
    }
    const auto outputs = model.predict(inputs, rngs);
    for (std::size_t j = 0; j < n; ++j) {
      const Scenario& record = records[start + j];
      const Agent& agent = center_agent(record);
      const EvalTrack track = eval_track(agent, inputs[j].frame);
      const TrajectoryBatch& final_modes = options.refine ? outputs[j].refined : outputs[j].initial;
      const TrajectoryBatch refined = restrict(final_modes, track);
      const TrajectoryBatch initial = restrict(outputs[j].initial, track);
      const Vec2 gt_end = inputs[j].frame.to_local(agent.future->states.back().position);
      acc[agent.type].add(refined, initial, track, final_modes.modes[final_modes.best_mode()], gt_end,
                          options.average);
    }
  }
  for (const auto& [type, a] : acc) report.per_type[type] = a.mean();
  return report;
}

EvalReport evaluate_constant_velocity(std::span<const Scenario> records, KinematicAverage average) {
  if (records.empty()) throw ValidationError("evaluation set is empty");
  EvalReport report;
  report.model = "constant_velocity";
  std::map<AgentType, Accumulator> acc;
  for (const Scenario& record : records) {
    const Agent& agent = center_agent(record);
    const AgentFrame frame{agent.current().position, agent.current().heading};
    const Vec2 v = frame.direction_to_local(agent.current().velocity);
    const std::size_t steps = agent.future ? agent.future->states.size() : 0;
    TrajectoryBatch batch;
    batch.scores = {0.0};
    batch.modes.emplace_back();
    for (std::size_t t = 0; t < steps; ++t) batch.modes[0].push_back(v * (static_cast<double>(t + 1) * record.dt));
    const EvalTrack track = eval_track(agent, frame);
    const TrajectoryBatch r = restrict(batch, track);
    acc[agent.type].add(r, r, track, batch.modes[0], frame.to_local(agent.future->states.back().position), average);
  }
  for (const auto& [type, a] : acc) report.per_type[type] = a.mean();
  return report;
}

nlohmann::json merge_reports(std::span<const EvalReport> reports) {
  nlohmann::json rows = nlohmann::json::array();
  nlohmann::json models = nlohmann::json::array();
  for (const auto& r : reports) {
    const nlohmann::json j = r.to_json();
    for (const auto& row : j.at("rows")) {
      nlohmann::json out = row;
      out["conditions"] = j.at("conditions");
      rows.push_back(out);
    }
    models.push_back(j);
  }
  return {{"rows", rows}, {"reports", models}};
}

}  // namespace dragtraffic
