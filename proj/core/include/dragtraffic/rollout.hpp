#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dragtraffic/initializer.hpp"
#include "dragtraffic/scene.hpp"

namespace dragtraffic {

struct RolloutAgent {
  std::int64_t id = 0;
  AgentType type = AgentType::Vehicle;
  double length = 0.0;
  double width = 0.0;
  Trajectory trajectory;   ///< executed future, global frame
  TrajectoryBatch modes;   ///< candidates of the last generate call, global frame
  std::size_t chosen_mode = 0;
  std::optional<ConditionContext> condition;
  friend bool operator==(const RolloutAgent&, const RolloutAgent&) = default;
};

struct RoutingEntry {
  std::int64_t agent_id = 0;
  AgentType agent_type = AgentType::Vehicle;
  std::string expert;
  friend bool operator==(const RoutingEntry&, const RoutingEntry&) = default;
};

/// Result of one generate call or one closed-loop rollout.
struct SceneRollout {
  std::string scenario_id;
  std::uint64_t seed = 0;
  std::size_t horizon_steps = 0;
  std::size_t replan_interval = 0;  ///< 0 for a single open-loop call
  std::size_t generate_calls = 0;
  std::vector<RolloutAgent> agents;
  std::vector<RoutingEntry> routing;

  const RolloutAgent& agent(std::int64_t id) const;
  friend bool operator==(const SceneRollout&, const SceneRollout&) = default;
};

nlohmann::json condition_to_json(const ConditionContext& c);
ConditionContext condition_from_json(const nlohmann::json& j);
nlohmann::json state_to_json(const AgentState& s);
AgentState state_from_json(const nlohmann::json& j, AgentType type);

nlohmann::json rollout_to_json(const SceneRollout& rollout);
SceneRollout rollout_from_json(const nlohmann::json& j);

}  // namespace dragtraffic
