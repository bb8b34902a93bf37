#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dragtraffic/model.hpp"
#include "dragtraffic/rollout.hpp"

namespace dragtraffic {

using ConditionMap = std::map<std::int64_t, ConditionContext>;

struct GenerateOptions {
  /// Agents to predict; empty means every agent with a valid current state.
  std::vector<std::int64_t> agents;
  /// Called after each agent with (done, total).
  std::function<void(std::size_t, std::size_t)> on_agent;
};

/// Type-keyed gate over one expert per agent type.
class MixtureOfExperts {
 public:
  /// Registers (or replaces) the expert serving the model's agent type.
  void add_expert(std::shared_ptr<const ExpertModel> model, std::string name = {});
  bool has_expert(AgentType type) const { return experts_.count(type) != 0; }
  /// Throws NotFoundError when no expert serves `type`.
  const ExpertModel& expert(AgentType type) const;
  /// Expert id for `type`; throws NotFoundError when unregistered.
  const std::string& route(AgentType type) const;
  std::vector<AgentType> types() const;

  /// One open-loop pass: every agent is predicted from the same snapshot,
  /// routed by type, and executes its highest-score mode. Agent `id` draws its
  /// reverse-step noise from Rng(seed).derive(id), so results do not depend on
  /// iteration order. Errors carry the agent id.
  SceneRollout generate(const Scenario& scenario, const ConditionMap& conditions, std::uint64_t seed,
                        const GenerateOptions& options = {}) const;

  /// Replans every `replan_interval` steps, executing that many steps of each
  /// plan before regenerating from the reached states. Steps beyond the model
  /// horizon continue at the final velocity. Throws ValidationError when the
  /// horizon is not a positive multiple of the interval.
  SceneRollout rollout_closed_loop(const Scenario& scenario, const ConditionMap& conditions,
                                   std::size_t horizon_steps, std::size_t replan_interval, std::uint64_t seed,
                                   const GenerateOptions& options = {}) const;

 private:
  struct Entry {
    std::shared_ptr<const ExpertModel> model;
    std::string name;
  };
  std::map<AgentType, Entry> experts_;
};

struct ClosedLoopResult {
  std::size_t replan_interval = 0;
  double collision_rate = 0.0;  ///< percent of agents, averaged over scenarios
  std::vector<SceneRollout> rollouts;
};

/// Runs rollout_closed_loop on every scenario for each interval (scenario i
/// uses seed + i) and scores the rollouts with scenario_collision_rate.
/// When `condition_ego` is set the ego agent is conditioned on its
/// ground-truth endpoint. Throws ValidationError for an empty scenario list.
std::vector<ClosedLoopResult> closed_loop_study(const MixtureOfExperts& experts, std::span<const Scenario> scenarios,
                                                std::span<const std::size_t> intervals, std::size_t horizon_steps,
                                                std::uint64_t seed, bool condition_ego = false);
/// {"horizon_steps", "rows": [{"replan_interval", "seconds", "collision_rate", "scenarios"}]}
nlohmann::json closed_loop_report(std::span<const ClosedLoopResult> results, std::size_t horizon_steps,
                                  double dt = kDt);

/// Global-frame trajectory whose velocities and headings come from finite
/// differences of `positions`, starting at `start`.
Trajectory trajectory_from_positions(std::span<const Vec2> positions, const AgentState& start, double dt = kDt);

/// Seed used for the n-th generate call of a closed-loop rollout (call 0 uses
/// the rollout seed itself).
std::uint64_t replan_seed(std::uint64_t seed, std::size_t call);

}  // namespace dragtraffic
