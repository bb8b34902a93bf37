// Acceptance suite: one line per criterion, nonzero exit if any fails.
// Usage: dragtraffic_acceptance [criterion ...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dragtraffic/dataio.hpp"
#include "dragtraffic/diffusion.hpp"
#include "dragtraffic/encoders.hpp"
#include "dragtraffic/initializer.hpp"
#include "dragtraffic/metrics.hpp"
#include "dragtraffic/model.hpp"
#include "dragtraffic/moe.hpp"
#include "dragtraffic/nn/layers.hpp"
#include "dragtraffic/nn/ops.hpp"
#include "dragtraffic/synth.hpp"
#include "dragtraffic/training.hpp"
#include "../support/fixtures.hpp"
#include "../support/grad_check.hpp"
#include "../support/models.hpp"
#include "../support/oracles.hpp"
#include "../support/pipeline_fixture.hpp"

using namespace dragtraffic;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

nn::Tensor gaussian(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  nn::Tensor t = nn::Tensor::matrix(r, c);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

// ---------------------------------------------------------------- gradients

testing::GradCheckResult check(nn::ParamStore& params, const std::function<nn::Var(nn::Graph&)>& loss,
                               std::size_t max_per_param = 64) {
  nn::Graph g(&params);
  const nn::Gradients grads = g.backward(loss(g));
  return testing::check_param_gradients(
      params, grads,
      [&] {
        nn::Graph fg(&params);
        return fg.value(loss(fg))[0];
      },
      1e-6, max_per_param);
}

EncoderConfig small_encoder() {
  EncoderConfig c;
  c.hidden = 8;
  c.mcg_blocks = 2;
  c.condition_hidden = 16;
  c.embedding = 12;
  c.max_agents = 8;
  c.max_lane_segments = 24;
  return c;
}

SceneBatch scene_batch(const Scenario& local, const EncoderConfig& config) {
  static std::vector<VectorizedScene> keep;
  keep.push_back(vectorize(local, config.vectorize_options()));
  const auto cond = condition_vector(condition_from_endpoint(local.agent(0)), AgentFrame{});
  const VectorizedScene* scenes[] = {&keep.back(), &keep.back()};
  const std::vector<double> conds[] = {{cond.begin(), cond.end()}, std::vector<double>(kConditionDim, 0.0)};
  return SceneBatch::stack(scenes, conds);
}

Outcome gradient_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string where;
  auto record = [&](const std::string& block, std::uint64_t seed, const testing::GradCheckResult& r) {
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      where = block + " seed " + std::to_string(seed) + " " + r.worst;
    }
  };
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(1000 + seed);
    {
      nn::ParamStore p;
      const nn::DenseLayer l1 = nn::DenseLayer::create(p, "l1", "g", 5, 8, rng);
      const nn::DenseLayer l2 = nn::DenseLayer::create(p, "l2", "g", 8, 4, rng);
      testing::jitter_params(p, rng);
      const nn::Tensor x = gaussian(8, 5, rng);
      const std::vector<std::uint8_t> mask{1, 1, 0, 1, 1, 0, 1, 1};
      record("dense+ops", seed, check(p, [&](nn::Graph& g) {
               nn::Var h = nn::relu(g, l1(g, g.constant(x)));
               nn::Var ctx = nn::max_pool_over_set(g, h, mask, 4);
               nn::Var y = l2(g, nn::layernorm(g, nn::mul(g, h, nn::repeat_rows(g, ctx, 4))));
               return nn::add(g, nn::mean(g, nn::square(g, y)),
                              nn::scale(g, nn::sum(g, nn::log_softmax(g, y)), -0.1));
             }));
    }
    {
      nn::ParamStore p;
      const McgBlock block = McgBlock::create(p, "m", "g", 6, rng);
      testing::jitter_params(p, rng);
      const nn::Tensor x = gaussian(8, 6, rng);
      const nn::Tensor c = gaussian(2, 6, rng);
      const std::vector<std::uint8_t> mask{1, 0, 1, 1, 1, 1, 0, 1};
      record("mcg", seed, check(p, [&](nn::Graph& g) {
               auto [gated, ctx] = mcg_forward(g, block, g.constant(x), g.constant(c), mask, 4);
               return nn::add(g, nn::sum(g, nn::square(g, gated)), nn::sum(g, nn::square(g, ctx)));
             }));
    }
    {
      nn::ParamStore p;
      const EncoderConfig config = small_encoder();
      const ContextEncoder enc = ContextEncoder::create(p, "enc", "ctx", config, rng);
      testing::jitter_params(p, rng);
      const SceneBatch batch = scene_batch(to_agent_frame(testing::road_scene(rng, 5), 0).first, config);
      record("context_encoder", seed,
             check(p, [&](nn::Graph& g) { return nn::sum(g, nn::square(g, enc.encode(g, batch))); }));
    }
    {
      nn::ParamStore p;
      const NoiseEstimator est = NoiseEstimator::create(p, "den", "noise", 10, 6, NoiseEstimatorConfig{16, 8}, rng);
      testing::jitter_params(p, rng);
      const nn::Tensor tau = gaussian(4, 10, rng);
      const nn::Tensor emb = gaussian(2, 6, rng);
      record("noise_estimator", seed, check(p, [&](nn::Graph& g) {
               nn::Var ctx = nn::repeat_rows(g, est.project_context(g, g.constant(emb)), 2);
               return nn::sum(g, nn::square(g, est.estimate(g, g.constant(tau), ctx, 3)));
             }));
    }
    {
      nn::ParamStore p;
      const EncoderConfig config = small_encoder();
      InitializerConfig ic;
      ic.trunk = 10;
      const Initializer init = Initializer::create(p, "init", "initializer", config, ic, rng);
      testing::jitter_params(p, rng);
      const SceneBatch batch = scene_batch(to_agent_frame(testing::road_scene(rng, 4), 0).first, config);
      const nn::Tensor target = gaussian(2 * kModes, 2 * kFutureSteps, rng);
      record("encoder->initializer->loss", seed, check(p, [&](nn::Graph& g) {
               const auto out = init.predict_modes(g, init.encoder().encode(g, batch));
               nn::Var mse = nn::mean(g, nn::square(g, nn::sub(g, out.trajectories, g.constant(target))));
               nn::Var nll = nn::scale(g, nn::sum(g, nn::pick(g, nn::log_softmax(g, out.scores), {2, 4})), -0.5);
               return nn::add(g, mse, nll);
             }));
    }
    {
      ModelConfig mc = testing::tiny_config();
      mc.encoder.hidden = 8;
      mc.encoder.condition_hidden = 8;
      mc.encoder.embedding = 8;
      mc.encoder.max_agents = 6;
      mc.encoder.max_lane_segments = 12;
      mc.initializer.trunk = 8;
      mc.estimator.hidden = 8;
      ExpertModel m = ExpertModel::create(mc, 2000 + seed);
      testing::jitter_params(m.params(), rng);
      const Scenario scene = testing::road_scene(rng, 4);
      const AgentInput in = prepare_agent(scene, 0, condition_from_endpoint(scene.agent(0)), mc.encoder);
      const VectorizedScene* scenes[] = {&in.scene};
      const std::vector<double> conds[] = {in.condition};
      const SceneBatch batch = SceneBatch::stack(scenes, conds);
      Rng nrng(seed);
      const auto noise = m.draw_noise(nrng);
      record("expert initializer->refine->loss", seed, check(m.params(), [&](nn::Graph& g) {
               const auto out = m.forward(g, batch, noise);
               return nn::add(g, nn::mean(g, nn::square(g, out.refined)),
                              nn::scale(g, nn::sum(g, nn::pick(g, nn::log_softmax(g, out.scores), {1})), -1.0));
             }, 8));
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 60.0,
          fmt("max rel error %.3g (< 1e-4), %.1f s (< 60 s); worst %s", worst, secs, where.c_str())};
}

// ---------------------------------------------------------------- diffusion

NoiseEstimate cheating_estimator(const DiffusionSchedule& s, const nn::Tensor& tau0) {
  return [&s, tau0](const nn::Tensor& tau_next, std::size_t gamma) {
    nn::Tensor eps = tau_next;
    const double a = std::sqrt(s.alpha_bars[gamma]);
    const double b = std::sqrt(1.0 - s.alpha_bars[gamma]);
    for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = (tau_next[i] - a * tau0[i]) / b;
    return eps;
  };
}

Outcome diffusion_round_trip() {
  const auto t0 = std::chrono::steady_clock::now();
  const DiffusionSchedule s = DiffusionSchedule::linear();
  Rng rng(77);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const nn::Tensor tau0 = gaussian(1, 2 * kFutureSteps, rng, 5.0);
    const nn::Tensor start = q_sample(s, tau0, s.refine_depth() - 1, gaussian(1, 2 * kFutureSteps, rng));
    const nn::Tensor out = refine(s, start, cheating_estimator(s, tau0));
    for (std::size_t j = 0; j < out.size(); ++j) worst = std::max(worst, std::abs(out[j] - tau0[j]));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-6 && secs < 10.0, fmt("max abs error %.3g (< 1e-6) over 100 trajectories, %.2f s", worst, secs)};
}

Outcome schedule_identities() {
  const DiffusionSchedule s = DiffusionSchedule::linear();
  bool decreasing = true;
  for (std::size_t i = 1; i < s.alpha_bars.size(); ++i) decreasing = decreasing && s.alpha_bars[i] < s.alpha_bars[i - 1];
  const DiffusionSchedule zero = DiffusionSchedule::from_betas(std::vector<double>(100, 0.0));
  Rng rng(5);
  bool q_identity = true, refine_identity = true;
  const NoiseEstimate zero_est = [](const nn::Tensor& t, std::size_t) {
    return nn::Tensor::matrix(t.rows(), t.cols());
  };
  for (int i = 0; i < 20; ++i) {
    const nn::Tensor tau = gaussian(kModes, 2 * kFutureSteps, rng, 3.0);
    for (std::size_t gamma : {std::size_t{0}, std::size_t{4}, std::size_t{99}}) {
      q_identity = q_identity && q_sample(zero, tau, gamma, gaussian(kModes, 2 * kFutureSteps, rng)) == tau;
    }
    refine_identity = refine_identity && refine(zero, tau, zero_est) == tau;
  }
  return {decreasing && q_identity && refine_identity,
          fmt("alpha_bar strictly decreasing: %s; zero-beta q_sample bit-identity: %s; refine bit-identity: %s",
              decreasing ? "yes" : "no", q_identity ? "yes" : "no", refine_identity ? "yes" : "no")};
}

// ---------------------------------------------------------------- toy corpus

struct ToyCorpus {
  DatasetSplit vehicles;
  std::map<AgentType, std::vector<Scenario>> datasets;
};

const ToyCorpus& toy_corpus() {
  static const ToyCorpus corpus = [] {
    SynthConfig sc;
    sc.seed = 7;
    sc.count = 2000;
    const auto raw = synthesize_scenarios(sc);
    ToyCorpus c;
    c.datasets = preprocess(raw).datasets;
    c.vehicles = split_dataset(c.datasets[AgentType::Vehicle], {}, 7);
    return c;
  }();
  return corpus;
}

struct ToyRun {
  std::shared_ptr<ExpertModel> model;
  double seconds = 0.0;
  double stage1_first = 0.0, stage1_last = 0.0;
};

// Two-stage training of the default-size vehicle expert; shared by the
// criteria that need a trained model.
const ToyRun& toy_run() {
  static const ToyRun run = [] {
    const auto t0 = std::chrono::steady_clock::now();
    const ToyCorpus& corpus = toy_corpus();
    ToyRun r;
    r.model = std::make_shared<ExpertModel>(ExpertModel::create(ModelConfig{}, 1));
    const auto examples = make_examples(corpus.vehicles.train, r.model->config());
    TrainConfig tc;
    tc.seed = 3;
    train_stage1(*r.model, examples, tc, [&](const EpochLog& l) {
      if (l.epoch == 1) r.stage1_first = l.loss;
      r.stage1_last = l.loss;
      if (l.epoch % 10 == 0) std::fprintf(stderr, "  stage 1 epoch %zu loss %.4f\n", l.epoch, l.loss);
    });
    tc.stage = Stage::InitializerFinetune;
    train_stage2(*r.model, examples, tc, [&](const EpochLog& l) {
      if (l.epoch % 10 == 0) std::fprintf(stderr, "  stage 2 epoch %zu loss %.4f mse %.3f\n", l.epoch, l.loss, l.mse);
    });
    r.seconds = seconds_since(t0);
    return r;
  }();
  return run;
}

Outcome toy_training() {
  const ToyRun& run = toy_run();
  const auto& val = toy_corpus().vehicles.val;
  const TypeMetrics cv = evaluate_constant_velocity(val).per_type.at(AgentType::Vehicle);
  const TypeMetrics m = evaluate(*run.model, val, EvalOptions{}).per_type.at(AgentType::Vehicle);
  const double reduction = 1.0 - m.min_ade / cv.min_ade;
  const bool pass = reduction >= 0.30 && m.min_ade <= m.initial_min_ade && run.seconds < 1800.0;
  return {pass, fmt("val n=%zu: refined minADE_6 %.3f vs constant velocity %.3f (%.1f%% lower, need >= 30%%); "
                    "initializer minADE_6 %.3f (refined <= initializer: %s); stage-1 L_NE %.3f -> %.3f; "
                    "training %.0f s (< 1800 s)",
                    m.count, m.min_ade, cv.min_ade, 100.0 * reduction, m.initial_min_ade,
                    m.min_ade <= m.initial_min_ade ? "yes" : "no", run.stage1_first, run.stage1_last, run.seconds)};
}

Outcome controllability() {
  const ToyRun& run = toy_run();
  const auto& held_out = toy_corpus().vehicles.test;
  EvalOptions o;
  const double free = evaluate(*run.model, held_out, o).per_type.at(AgentType::Vehicle).endpoint_error;
  o.conditions = ConditionsPolicy::FromGtEndpoint;
  const double guided = evaluate(*run.model, held_out, o).per_type.at(AgentType::Vehicle).endpoint_error;
  return {guided <= 0.5 * free, fmt("%zu held-out scenes: endpoint error conditioned %.3f m, unconditioned %.3f m "
                                    "(ratio %.3f, need <= 0.5)",
                                    held_out.size(), guided, free, guided / free)};
}

// ---------------------------------------------------------------- metrics

Outcome metrics_oracles() {
  Rng rng(2024);
  double iou_err = 0.0;
  for (int i = 0; i < 100; ++i) {
    OrientedBox a{{rng.normal(), rng.normal()}, rng.uniform(-3, 3), rng.uniform(0.5, 5), rng.uniform(0.5, 3)};
    OrientedBox b{{rng.normal(), rng.normal()}, rng.uniform(-3, 3), rng.uniform(0.5, 5), rng.uniform(0.5, 3)};
    iou_err = std::max(iou_err, std::abs(obb_iou(a, b) - testing::monte_carlo_iou(a, b, 1000000, rng)));
  }
  std::vector<SceneRollout> rollouts;
  for (int i = 0; i < 50; ++i) rollouts.push_back(testing::random_rollout(rng, 8, 20, 6.0));
  std::size_t scr_mismatch = 0;
  for (double th : {0.05, kDefaultCollisionIou, 0.5}) {
    scr_mismatch += scenario_collision_rate(rollouts, th) != testing::brute_force_scr(rollouts, th);
  }
  double disp_err = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto steps = static_cast<std::size_t>(rng.uniform_int(2, 60));
    std::vector<Vec2> gt(steps);
    for (auto& p : gt) p = {rng.normal() * 10, rng.normal() * 10};
    TrajectoryBatch b;
    for (std::size_t k = 0; k < kModes; ++k) {
      std::vector<Vec2> m(steps);
      for (auto& p : m) p = {rng.normal() * 10, rng.normal() * 10};
      b.modes.push_back(m);
      b.scores.push_back(rng.normal());
    }
    const auto ref = testing::brute_force_displacement(b, gt);
    disp_err = std::max({disp_err, std::abs(min_ade_k(b, gt) - ref.ade), std::abs(min_fde_k(b, gt) - ref.fde)});
  }
  return {iou_err < 0.01 && scr_mismatch == 0 && disp_err < 1e-12,
          fmt("obb_iou vs 1e6-sample Monte Carlo on 100 pairs: max error %.4f (< 0.01); SCR vs all-pairs oracle on "
              "50 rollouts: %zu mismatches; minADE/minFDE vs brute force on 1000 fixtures: max error %.2g",
              iou_err, scr_mismatch, disp_err)};
}

// ---------------------------------------------------------------- MoE

std::shared_ptr<MixtureOfExperts> untrained_experts() {
  auto moe = std::make_shared<MixtureOfExperts>();
  for (AgentType t : kAgentTypes) {
    moe->add_expert(std::make_shared<const ExpertModel>(ExpertModel::create(testing::tiny_config(t), 40)));
  }
  return moe;
}

Outcome moe_routing() {
  const auto moe = untrained_experts();
  SynthConfig sc;
  sc.seed = 31;
  sc.count = 3;
  const auto scenes = synthesize_scenarios(sc);
  std::size_t agents = 0, routed = 0;
  bool reproducible = true;
  for (const Scenario& s : scenes) {
    const SceneRollout a = moe->generate(s, {}, 9);
    const SceneRollout b = moe->generate(s, {}, 9);
    reproducible = reproducible && a == b;
    for (const Agent& agent : s.agents) {
      ++agents;
      for (const RoutingEntry& e : a.routing) {
        if (e.agent_id == agent.id && e.agent_type == agent.type &&
            e.expert == std::string(to_string(agent.type)) + "_expert" &&
            moe->expert(e.agent_type).config().agent_type == agent.type) {
          ++routed;
          break;
        }
      }
    }
  }
  return {routed == agents && reproducible,
          fmt("%zu/%zu agents routed to the type-matching expert; repeated generate bit-identical: %s", routed, agents,
              reproducible ? "yes" : "no")};
}

// ---------------------------------------------------------------- pipeline

Outcome pipeline_filters() {
  const PreprocessResult out = preprocess(testing::filter_fixture());
  std::set<std::string> ids;
  for (const auto& [type, records] : out.datasets) {
    for (const auto& r : records) ids.insert(r.id);
  }
  const std::set<std::string> expected = {"rec-a/w0/vehicle", "rec-a/w0/pedestrian", "rec-a/w0/cyclist",
                                          "rec-a/w1/vehicle", "rec-d/w0/vehicle"};
  const std::vector<DropRecord> drops = {
      {"rec-a", 1, AgentType::Pedestrian, "min_frames"},
      {"rec-a", 1, AgentType::Cyclist, "invalid_endpoint"},
      {"rec-a", 2, std::nullopt, "min_agents"},
      {"rec-b", 0, std::nullopt, "min_agents"},
      {"rec-d", 0, AgentType::Pedestrian, "no_center_agent"},
      {"rec-d", 0, AgentType::Cyclist, "no_center_agent"},
  };
  std::set<std::string> reasons;
  for (const auto& d : out.drops) reasons.insert(d.reason);
  return {ids == expected && out.drops == drops,
          fmt("%zu surviving records (expected %zu), %zu drops (expected %zu), reasons covered: %zu/4", ids.size(),
              expected.size(), out.drops.size(), drops.size(), reasons.size())};
}

// ---------------------------------------------------------------- closed loop

std::shared_ptr<const ExpertModel> quick_expert(AgentType type) {
  auto records = toy_corpus().datasets.at(type);
  if (records.size() > 256) records.resize(256);
  ExpertModel m = ExpertModel::create(testing::tiny_config(type), 50);
  const auto examples = make_examples(records, m.config());
  TrainConfig tc;
  tc.epochs = 5;
  tc.seed = 4;
  train_stage1(m, examples, tc);
  tc.stage = Stage::InitializerFinetune;
  train_stage2(m, examples, tc);
  return std::make_shared<const ExpertModel>(std::move(m));
}

Outcome closed_loop() {
  MixtureOfExperts moe;
  moe.add_expert(toy_run().model);
  moe.add_expert(quick_expert(AgentType::Pedestrian));
  moe.add_expert(quick_expert(AgentType::Cyclist));
  std::vector<Scenario> scenes(toy_corpus().vehicles.test.begin(), toy_corpus().vehicles.test.begin() + 8);
  const std::vector<std::size_t> intervals = {30, 60, 90};
  const std::size_t horizon = 180;
  const auto results = closed_loop_study(moe, scenes, intervals, horizon, 100);
  const auto report = closed_loop_report(results, horizon);
  std::ostringstream table;
  bool shaped = report.at("rows").size() == intervals.size();
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& row = report.at("rows").at(i);
    shaped = shaped && row.at("replan_interval") == intervals[i] && std::isfinite(row.at("collision_rate").get<double>());
    table << (i ? ", " : "") << intervals[i] << " steps (" << row.at("seconds").get<double>()
          << " s): SCR " << fmt("%.2f%%", row.at("collision_rate").get<double>());
  }
  return {shaped, fmt("%zu scenes, horizon %zu: %s", scenes.size(), horizon, table.str().c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient_fidelity", gradient_fidelity},
      {"diffusion_round_trip", diffusion_round_trip},
      {"schedule_identities", schedule_identities},
      {"metrics_oracles", metrics_oracles},
      {"moe_routing", moe_routing},
      {"pipeline_filters", pipeline_filters},
      {"toy_training", toy_training},
      {"controllability", controllability},
      {"closed_loop", closed_loop},
  };
  std::set<std::string> only(argv + 1, argv + argc);
  int failures = 0;
  for (const auto& [name, run] : criteria) {
    if (!only.empty() && !only.count(name)) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
