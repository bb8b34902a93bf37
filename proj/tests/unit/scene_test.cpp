#include <gtest/gtest.h>

#include <complex>
#include <numbers>

#include "dragtraffic/error.hpp"
#include "dragtraffic/rng.hpp"
#include "dragtraffic/scene.hpp"

namespace dragtraffic {
namespace {

constexpr double kPi = std::numbers::pi;

AgentState state_at(Vec2 p, double heading, AgentType type = AgentType::Vehicle) {
  AgentState s;
  s.position = p;
  s.heading = heading;
  s.type = type;
  if (type == AgentType::Pedestrian) {
    s.length = 0.6;
    s.width = 0.6;
  }
  return s;
}

Agent make_agent(std::int64_t id, Vec2 p, double heading, AgentType type = AgentType::Vehicle) {
  Agent a;
  a.id = id;
  a.type = type;
  a.history = {state_at(p, heading, type)};
  a.length = a.history[0].length;
  a.width = a.history[0].width;
  return a;
}

Scenario two_agent_scene() {
  Scenario s;
  s.id = "fixture";
  s.agents = {make_agent(0, {10, 5}, kPi / 2), make_agent(1, {10, 6}, 0.0)};
  s.ego_id = 0;
  return s;
}

TEST(WrapAngleTest, RangeAndEquivalence) {
  Rng rng(5);
  for (int i = 0; i < 10000; ++i) {
    const double theta = rng.uniform(-100.0, 100.0);
    const double h = wrap_angle(theta);
    EXPECT_LE(std::abs(h), kPi);
    EXPECT_GT(h, -kPi);
    EXPECT_LT(std::abs(std::polar(1.0, h) - std::polar(1.0, theta)), 1e-12);
  }
  EXPECT_DOUBLE_EQ(wrap_angle(-kPi), kPi);
}

TEST(AgentStateTest, InvariantViolationsAreNamed) {
  AgentState s;
  s.length = 1.0;
  s.width = 2.0;
  EXPECT_THROW(s.validate(), ValidationError);
  s.length = 3.0;
  s.heading = 4.0;
  EXPECT_THROW(s.validate(), ValidationError);
  s.heading = 0.0;
  EXPECT_NO_THROW(s.validate());
}

TEST(AgentFrameTest, TargetMovesToOriginAndNorthMapsToPlusX) {
  auto [local, frame] = to_agent_frame(two_agent_scene(), 0);
  const auto& ego = local.agent(0).current();
  EXPECT_NEAR(ego.position.x, 0.0, 1e-12);
  EXPECT_NEAR(ego.position.y, 0.0, 1e-12);
  EXPECT_NEAR(ego.heading, 0.0, 1e-12);
  const auto& other = local.agent(1).current();
  EXPECT_NEAR(other.position.x, 1.0, 1e-12);
  EXPECT_NEAR(other.position.y, 0.0, 1e-12);
  EXPECT_NEAR(other.heading, -kPi / 2, 1e-12);
}

TEST(AgentFrameTest, IdentityFrameLeavesSceneUnchanged) {
  Scenario s;
  s.id = "identity";
  s.agents = {make_agent(0, {0, 0}, 0.0), make_agent(1, {3, -2}, 0.4)};
  s.map.lanes.push_back(Lane{7, {{1, 1}, {2, 1}}, {one_hot(LaneAttribute::Lane), one_hot(LaneAttribute::Edge)}});
  auto [local, frame] = to_agent_frame(s, 0);
  EXPECT_EQ(local.agents, s.agents);
  EXPECT_EQ(local.map, s.map);
}

TEST(AgentFrameTest, CropExcludesLanePointsBeyondSixtyMetres) {
  Scenario s = two_agent_scene();
  s.agents[0].history[0].heading = 0.0;
  s.map.lanes.push_back(Lane{1, {{10 + 80, 5}}, {one_hot(LaneAttribute::Lane)}});
  s.map.lanes.push_back(Lane{2, {{10 + 30, 5}, {10 + 80, 5}}, {one_hot(LaneAttribute::Lane), one_hot(LaneAttribute::Lane)}});
  auto [local, frame] = to_agent_frame(s, 0);
  ASSERT_EQ(local.map.lanes.size(), 1u);
  EXPECT_EQ(local.map.lanes[0].id, 2);
  EXPECT_EQ(local.map.lanes[0].points.size(), 1u);
}

TEST(AgentFrameTest, UnknownOrInvalidAgentIsRejected) {
  Scenario s = two_agent_scene();
  EXPECT_THROW(to_agent_frame(s, 99), NotFoundError);
  s.agents[1].history[0].valid = false;
  EXPECT_THROW(to_agent_frame(s, 1), ValidationError);
}

TEST(AgentFrameTest, FromFrameHandEvaluated) {
  const AgentFrame frame{{3, 4}, kPi};
  Trajectory t{{state_at({1, 0}, 0.0)}};
  const Trajectory g = from_agent_frame(t, frame);
  EXPECT_NEAR(g.states[0].position.x, 2.0, 1e-12);
  EXPECT_NEAR(g.states[0].position.y, 4.0, 1e-12);
  const Trajectory same = from_agent_frame(t, AgentFrame{});
  EXPECT_EQ(same.states[0].position, t.states[0].position);
}

TEST(AgentFrameTest, RoundTripIsIdentity) {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const AgentFrame frame{{rng.uniform(-500, 500), rng.uniform(-500, 500)}, rng.uniform(-kPi, kPi)};
    Trajectory t;
    for (std::size_t i = 0; i < kFutureSteps; ++i) {
      AgentState s = state_at({rng.uniform(-200, 200), rng.uniform(-200, 200)}, wrap_angle(rng.uniform(-4, 4)));
      s.velocity = {rng.normal(), rng.normal()};
      t.states.push_back(s);
    }
    const Trajectory back = from_agent_frame(to_agent_frame(t, frame), frame);
    for (std::size_t i = 0; i < t.size(); ++i) {
      EXPECT_LT((back.states[i].position - t.states[i].position).norm(), 1e-9);
      EXPECT_LT((back.states[i].velocity - t.states[i].velocity).norm(), 1e-9);
      EXPECT_LT(std::abs(wrap_angle(back.states[i].heading - t.states[i].heading)), 1e-9);
    }
  }
}

TEST(AgentFrameTest, ShrinkingCropNeverAddsLanes) {
  Rng rng(8);
  Scenario s = two_agent_scene();
  for (int l = 0; l < 40; ++l) {
    Lane lane{l, {}, {}};
    for (int k = 0; k < 5; ++k) {
      lane.points.push_back({rng.uniform(-100, 120), rng.uniform(-100, 120)});
      lane.attributes.push_back(one_hot(LaneAttribute::Lane));
    }
    s.map.lanes.push_back(lane);
  }
  std::size_t prev_lanes = SIZE_MAX;
  std::size_t prev_segments = SIZE_MAX;
  for (double half : {80.0, 60.0, 40.0, 20.0, 5.0}) {
    auto [local, frame] = to_agent_frame(s, 0, half);
    EXPECT_LE(local.map.lanes.size(), prev_lanes);
    EXPECT_LE(local.map.segment_count(), prev_segments);
    prev_lanes = local.map.lanes.size();
    prev_segments = local.map.segment_count();
  }
}

TEST(VectorizeTest, SingleStaticAgentRow) {
  Scenario s;
  s.id = "single";
  s.agents = {make_agent(0, {0, 0}, 0.0)};
  const VectorizedScene v = vectorize(s);
  const std::vector<double> expected{0, 0, 0, 0, 1, 0, 4.5, 1.9, 1, 0, 0};
  for (std::size_t j = 0; j < kAgentFeatures; ++j) EXPECT_DOUBLE_EQ(v.agents(0, j), expected[j]) << j;
  EXPECT_EQ(v.agent_mask[0], 1);
}

TEST(VectorizeTest, PaddingMaskCountsValidAgents) {
  Scenario s;
  s.id = "pair";
  s.agents = {make_agent(0, {0, 0}, 0.0), make_agent(1, {5, 0}, 0.0, AgentType::Pedestrian)};
  const VectorizedScene v = vectorize(s, VectorizeOptions{1, 32, 16});
  ASSERT_EQ(v.agent_mask.size(), 32u);
  EXPECT_EQ(std::count(v.agent_mask.begin(), v.agent_mask.end(), 1), 2);
  EXPECT_EQ(std::count(v.agent_mask.begin(), v.agent_mask.end(), 0), 30);
  EXPECT_DOUBLE_EQ(v.agents(1, 9), 1.0);  // pedestrian one-hot
}

TEST(VectorizeTest, CollinearLaneSharesDirection) {
  Scenario s;
  s.id = "lane";
  s.agents = {make_agent(0, {0, 0}, 0.0)};
  s.map.lanes.push_back(Lane{1, {{0, 2}, {1, 2}, {2, 2}}, std::vector<SegmentAttributes>(3, one_hot(LaneAttribute::Lane))});
  const VectorizedScene v = vectorize(s);
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_DOUBLE_EQ(v.lanes(r, 2), 1.0);
    EXPECT_DOUBLE_EQ(v.lanes(r, 3), 0.0);
    EXPECT_DOUBLE_EQ(v.lanes(r, 4), 1.0);
  }
  EXPECT_EQ(v.lane_mask[3], 0);
}

TEST(VectorizeTest, NoValidTargetIsAnError) {
  Scenario s;
  s.id = "empty";
  s.agents = {make_agent(0, {0, 0}, 0.0)};
  s.agents[0].history[0].valid = false;
  EXPECT_THROW(vectorize(s), ValidationError);
}

TEST(ScenarioTest, ValidateCatchesMisalignedHistories) {
  Scenario s = two_agent_scene();
  EXPECT_NO_THROW(s.validate());
  s.agents[1].history.push_back(s.agents[1].history[0]);
  EXPECT_THROW(s.validate(), ValidationError);
  s = two_agent_scene();
  s.ego_id = 5;
  EXPECT_THROW(s.validate(), ValidationError);
}

}  // namespace
}  // namespace dragtraffic
