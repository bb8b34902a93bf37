#include <gtest/gtest.h>

#include <cmath>

#include "dragtraffic/error.hpp"
#include "dragtraffic/training.hpp"
#include "../support/fixtures.hpp"
#include "../support/models.hpp"

namespace dragtraffic {
namespace {

std::vector<Scenario> road_records(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Scenario> out;
  for (std::size_t i = 0; i < n; ++i) {
    Scenario s = testing::road_scene(rng);
    s.id = "road-" + std::to_string(seed) + "-" + std::to_string(i);
    s.meta.source_id = s.id;
    out.push_back(std::move(s));
  }
  return out;
}

TrainConfig quick(Stage stage, std::size_t epochs) {
  TrainConfig c;
  c.stage = stage;
  c.epochs = epochs;
  c.batch_size = 4;
  c.seed = 11;
  return c;
}

TEST(TrainConfigTest, StagesAndDefaults) {
  EXPECT_EQ(parse_stage("1"), Stage::DenoiserPretrain);
  EXPECT_EQ(parse_stage("initializer_finetune"), Stage::InitializerFinetune);
  EXPECT_EQ(parse_stage("baseline"), Stage::BaselineRegression);
  EXPECT_THROW(parse_stage("3"), ValidationError);
  EXPECT_EQ(default_epochs(Stage::DenoiserPretrain), 100u);
  EXPECT_EQ(default_epochs(Stage::InitializerFinetune), 40u);
  EXPECT_EQ(default_epochs(Stage::BaselineRegression), 150u);
  TrainConfig c = quick(Stage::InitializerFinetune, 7);
  c.lr_end = 1e-5;
  const TrainConfig back = TrainConfig::from_json(c.to_json());
  EXPECT_EQ(back.stage, c.stage);
  EXPECT_EQ(back.epochs, 7u);
  EXPECT_EQ(back.lr_end, 1e-5);
  EXPECT_THROW(TrainConfig::from_json({{"condition_dropout", 2.0}}), ValidationError);
}

TEST(MakeExamplesTest, FutureIsInAgentFrameAndNeedsGroundTruth) {
  auto records = road_records(1, 3);
  const ModelConfig cfg = testing::tiny_config();
  const auto ex = make_examples(records, cfg);
  ASSERT_EQ(ex.size(), 1u);
  const Agent& ego = records[0].agent(0);
  const double speed = ego.current().speed();
  EXPECT_NEAR(ex[0].future[0], speed * kDt, 1e-9);
  EXPECT_NEAR(ex[0].future[1], 0.0, 1e-9);
  EXPECT_NEAR(ex[0].future[118], speed * kDt * 60, 1e-9);
  EXPECT_EQ(ex[0].input.condition.back(), 1.0);
  records[0].agents[0].future.reset();
  EXPECT_THROW(make_examples(records, cfg), ValidationError);
}

TEST(TrainStage1Test, EmptyDatasetIsAnError) {
  auto model = ExpertModel::create(testing::tiny_config(), 1);
  EXPECT_THROW(train_stage1(model, {}, quick(Stage::DenoiserPretrain, 1)), ValidationError);
}

TEST(TrainStage1Test, UpdatesEncoderAndEstimatorOnly) {
  auto model = ExpertModel::create(testing::tiny_config(), 2);
  const auto ex = make_examples(road_records(8, 5), model.config());
  const auto ctx = model.params().checksum(std::string(kContextEncoderGroup));
  const auto den = model.params().checksum(std::string(kNoiseEstimatorGroup));
  const auto init = model.params().checksum(std::string(kInitializerGroup));
  const auto r = train_stage1(model, ex, quick(Stage::DenoiserPretrain, 1));
  EXPECT_EQ(r.steps, 2);
  EXPECT_NE(model.params().checksum(std::string(kContextEncoderGroup)), ctx);
  EXPECT_NE(model.params().checksum(std::string(kNoiseEstimatorGroup)), den);
  EXPECT_EQ(model.params().checksum(std::string(kInitializerGroup)), init);
  EXPECT_EQ(model.metadata().at("stages").back(), "denoiser_pretrain");
  EXPECT_EQ(model.metadata().at("train_sources").size(), 8u);
}

TEST(TrainStage1Test, OverfitsSingleSample) {
  auto model = ExpertModel::create(testing::tiny_config(), 3);
  const auto ex = make_examples(road_records(1, 9), model.config());
  const double before = noise_estimation_loss(model, ex, 4);
  TrainConfig c = quick(Stage::DenoiserPretrain, 150);
  c.lr_start = 1e-3;
  c.lr_end = 1e-3;
  const auto r = train_stage1(model, ex, c);
  double first = 0.0;
  double last = 0.0;
  for (std::size_t i = 0; i < 20; ++i) {
    first += r.epochs[i].loss;
    last += r.epochs[r.epochs.size() - 1 - i].loss;
  }
  EXPECT_LT(last, first);
  EXPECT_LT(noise_estimation_loss(model, ex, 4), before);
}

TEST(TrainStage1Test, TenthEpochBelowFirst) {
  auto model = ExpertModel::create(testing::tiny_config(), 5);
  const auto ex = make_examples(road_records(16, 21), model.config());
  const auto r = train_stage1(model, ex, quick(Stage::DenoiserPretrain, 10));
  ASSERT_EQ(r.epochs.size(), 10u);
  EXPECT_LT(r.epochs[9].loss, r.epochs[0].loss);
}

TEST(TrainStage1Test, SameSeedSameParameters) {
  const auto ex = make_examples(road_records(6, 6), testing::tiny_config());
  auto a = ExpertModel::create(testing::tiny_config(), 4);
  auto b = ExpertModel::create(testing::tiny_config(), 4);
  const auto ra = train_stage1(a, ex, quick(Stage::DenoiserPretrain, 2));
  const auto rb = train_stage1(b, ex, quick(Stage::DenoiserPretrain, 2));
  EXPECT_EQ(a.params().checksum(), b.params().checksum());
  EXPECT_EQ(ra.epochs.back().loss, rb.epochs.back().loss);
}

TEST(TrainStage2Test, RequiresStageOne) {
  auto model = ExpertModel::create(testing::tiny_config(), 5);
  const auto ex = make_examples(road_records(2, 1), model.config());
  EXPECT_THROW(train_stage2(model, ex, quick(Stage::InitializerFinetune, 1)), ValidationError);
}

TEST(TrainStage2Test, DenoiserGroupsAreBitIdentical) {
  auto model = ExpertModel::create(testing::tiny_config(), 6);
  const auto ex = make_examples(road_records(8, 2), model.config());
  train_stage1(model, ex, quick(Stage::DenoiserPretrain, 1));
  const auto ctx = model.params().checksum(std::string(kContextEncoderGroup));
  const auto den = model.params().checksum(std::string(kNoiseEstimatorGroup));
  const auto init = model.params().checksum(std::string(kInitializerGroup));
  const auto r = train_stage2(model, ex, quick(Stage::InitializerFinetune, 2));
  EXPECT_EQ(model.params().checksum(std::string(kContextEncoderGroup)), ctx);
  EXPECT_EQ(model.params().checksum(std::string(kNoiseEstimatorGroup)), den);
  EXPECT_NE(model.params().checksum(std::string(kInitializerGroup)), init);
  EXPECT_FALSE(model.params().group_frozen(kNoiseEstimatorGroup));
  for (const auto& e : r.epochs) EXPECT_NEAR(e.loss, e.mse / 100.0 + e.nll, 1e-9);
}

TEST(TrainStage2Test, PerfectRegressionLeavesOnlyTheScoreTerm) {
  auto model = ExpertModel::create(testing::tiny_config(), 7);
  for (const auto& name : {model.initializer().trajectory_head().weight, model.initializer().trajectory_head().bias,
                           model.initializer().score_head().weight, model.initializer().score_head().bias}) {
    model.params().value(name).fill(0.0);
  }
  auto records = road_records(3, 8);
  for (auto& r : records) {
    Agent& ego = r.agents[0];
    ego.history[0].velocity = {0, 0};
    for (auto& s : ego.future->states) s.position = ego.current().position;
  }
  const auto [mse, nll] = regression_losses(model, make_examples(records, model.config()), false, 0);
  EXPECT_EQ(mse, 0.0);
  EXPECT_NEAR(nll, std::log(6.0), 1e-12);
}

TEST(BaselineTest, TrainsInitializerWithoutStageOne) {
  auto model = ExpertModel::create(testing::tiny_config(), 8);
  const auto ex = make_examples(road_records(8, 4), model.config());
  const auto before = regression_losses(model, ex, false, 0);
  TrainConfig c = quick(Stage::BaselineRegression, 20);
  c.lr_start = 1e-3;
  train_baseline(model, ex, c);
  const auto after = regression_losses(model, ex, false, 0);
  EXPECT_LT(after.first + after.second, before.first + before.second);
}

TEST(EvaluateTest, ErrorsOnEmptySetAndLeakage) {
  auto model = ExpertModel::create(testing::tiny_config(), 9);
  EXPECT_THROW(evaluate(model, {}, {}), ValidationError);
  const auto records = road_records(4, 12);
  const auto ex = make_examples(std::span(records).first(2), model.config());
  train_stage1(model, ex, quick(Stage::DenoiserPretrain, 1));
  EXPECT_THROW(evaluate(model, records, {}), ValidationError);
  EXPECT_NO_THROW(evaluate(model, std::span(records).subspan(2), {}));
}

TEST(EvaluateTest, DeterministicAndConditionSensitive) {
  auto model = ExpertModel::create(testing::tiny_config(), 10);
  const auto records = road_records(5, 13);
  EvalOptions o;
  o.seed = 3;
  const auto a = evaluate(model, records, o).to_json();
  const auto b = evaluate(model, records, o).to_json();
  EXPECT_EQ(a, b);
  o.conditions = ConditionsPolicy::FromGtEndpoint;
  const auto c = evaluate(model, records, o).to_json();
  EXPECT_NE(a.at("per_type"), c.at("per_type"));
  EXPECT_EQ(c.at("conditions"), "from_gt_endpoint");
  EXPECT_EQ(a.at("per_type").at("vehicle").at("count"), 5);
}

TEST(EvaluateTest, ReportRowsAreKeyedByDatasetModelMetric) {
  const auto records = road_records(3, 14);
  const auto report = evaluate_constant_velocity(records);
  const auto j = report.to_json();
  bool found = false;
  for (const auto& row : j.at("rows")) {
    EXPECT_TRUE(row.contains("dataset") && row.contains("model") && row.contains("metric") && row.contains("value"));
    if (row.at("metric") == "minADE_6") found = true;
  }
  EXPECT_TRUE(found);
}

TEST(EvaluateTest, ConstantVelocityIsExactOnConstantVelocityFutures) {
  const auto records = road_records(6, 15);
  const auto m = evaluate_constant_velocity(records).per_type.at(AgentType::Vehicle);
  EXPECT_EQ(m.count, 6u);
  EXPECT_LT(m.min_ade, 1e-9);
  EXPECT_LT(m.min_fde, 1e-9);
  EXPECT_LT(m.endpoint_error, 1e-9);
  EXPECT_LT(m.heading_error, 1e-9);
  EXPECT_LT(m.speed_error, 1e-9);
}

}  // namespace
}  // namespace dragtraffic
