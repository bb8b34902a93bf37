#include "dragtraffic/moe.hpp"

#include <algorithm>
#include <cmath>

#include "dragtraffic/error.hpp"
#include "dragtraffic/metrics.hpp"

namespace dragtraffic {

namespace {

[[noreturn]] void rethrow_for_agent(std::int64_t id) {
  const std::string prefix = "agent " + std::to_string(id) + ": ";
  try {
    throw;
  } catch (const SchemaError& e) {
    throw SchemaError(prefix + e.what());
  } catch (const ShapeError& e) {
    throw ShapeError(prefix + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(prefix + e.what());
  } catch (const NotFoundError& e) {
    throw NotFoundError(prefix + e.what());
  } catch (const NumericError& e) {
    throw NumericError(prefix + e.what());
  } catch (const ConflictError& e) {
    throw ConflictError(prefix + e.what());
  } catch (const Error& e) {
    throw Error(prefix + e.what());
  }
}

std::vector<Vec2> to_global(const std::vector<Vec2>& pts, const AgentFrame& frame) {
  std::vector<Vec2> out;
  out.reserve(pts.size());
  for (const Vec2& p : pts) out.push_back(frame.to_global(p));
  return out;
}

std::vector<std::int64_t> requested_agents(const Scenario& scenario, const GenerateOptions& options) {
  if (!options.agents.empty()) {
    for (std::int64_t id : options.agents) {
      if (!scenario.has_agent(id)) throw NotFoundError("agent " + std::to_string(id) + " is not in the scenario");
    }
    return options.agents;
  }
  std::vector<std::int64_t> ids;
  for (const Agent& a : scenario.agents) {
    if (a.current().valid) ids.push_back(a.id);
  }
  return ids;
}

}  // namespace

void MixtureOfExperts::add_expert(std::shared_ptr<const ExpertModel> model, std::string name) {
  if (!model) throw ValidationError("null expert");
  const AgentType type = model->config().agent_type;
  if (name.empty()) name = std::string(to_string(type)) + "_expert";
  experts_[type] = Entry{std::move(model), std::move(name)};
}

const ExpertModel& MixtureOfExperts::expert(AgentType type) const {
  const auto it = experts_.find(type);
  if (it == experts_.end()) throw NotFoundError("no expert registered for type '" + std::string(to_string(type)) + "'");
  return *it->second.model;
}

const std::string& MixtureOfExperts::route(AgentType type) const {
  const auto it = experts_.find(type);
  if (it == experts_.end()) throw NotFoundError("no expert registered for type '" + std::string(to_string(type)) + "'");
  return it->second.name;
}

std::vector<AgentType> MixtureOfExperts::types() const {
  std::vector<AgentType> out;
  for (const auto& [type, _] : experts_) out.push_back(type);
  return out;
}

SceneRollout MixtureOfExperts::generate(const Scenario& scenario, const ConditionMap& conditions, std::uint64_t seed,
                                        const GenerateOptions& options) const {
  for (const auto& [id, _] : conditions) {
    if (!scenario.has_agent(id)) throw NotFoundError("condition for unknown agent " + std::to_string(id));
  }
  const std::vector<std::int64_t> ids = requested_agents(scenario, options);
  SceneRollout out;
  out.scenario_id = scenario.id;
  out.seed = seed;
  out.generate_calls = 1;
  for (std::size_t n = 0; n < ids.size(); ++n) {
    const std::int64_t id = ids[n];
    try {
      const Agent& agent = scenario.agent(id);
      const std::string& expert_id = route(agent.type);
      const ExpertModel& model = expert(agent.type);
      std::optional<ConditionContext> cond;
      if (const auto it = conditions.find(id); it != conditions.end() && it->second.valid) cond = it->second;
      const std::vector<AgentInput> inputs{prepare_agent(scenario, id, cond, model.config().encoder)};
      std::vector<Rng> rngs{Rng(seed).derive(static_cast<std::uint64_t>(id))};
      const ModelOutput result = model.predict(inputs, rngs).front();

      RolloutAgent ra;
      ra.id = id;
      ra.type = agent.type;
      ra.length = agent.length;
      ra.width = agent.width;
      ra.condition = cond;
      ra.modes.scores = result.refined.scores;
      for (const auto& mode : result.refined.modes) ra.modes.modes.push_back(to_global(mode, inputs[0].frame));
      ra.chosen_mode = result.refined.best_mode();
      ra.trajectory = trajectory_from_positions(ra.modes.modes[ra.chosen_mode], agent.current(), scenario.dt);
      out.horizon_steps = ra.trajectory.size();
      out.agents.push_back(std::move(ra));
      out.routing.push_back(RoutingEntry{id, agent.type, expert_id});
    } catch (const Error&) {
      rethrow_for_agent(id);
    }
    if (options.on_agent) options.on_agent(n + 1, ids.size());
  }
  return out;
}

SceneRollout MixtureOfExperts::rollout_closed_loop(const Scenario& scenario, const ConditionMap& conditions,
                                                   std::size_t horizon_steps, std::size_t replan_interval,
                                                   std::uint64_t seed, const GenerateOptions& options) const {
  if (replan_interval == 0 || horizon_steps == 0 || horizon_steps % replan_interval != 0) {
    throw ValidationError("horizon " + std::to_string(horizon_steps) + " is not a positive multiple of interval " +
                          std::to_string(replan_interval));
  }
  const std::size_t calls = horizon_steps / replan_interval;
  Scenario scene = scenario;
  for (Agent& a : scene.agents) a.future.reset();
  GenerateOptions pass = options;
  pass.agents = requested_agents(scenario, options);

  SceneRollout out;
  out.scenario_id = scenario.id;
  out.seed = seed;
  out.horizon_steps = horizon_steps;
  out.replan_interval = replan_interval;
  out.generate_calls = calls;
  std::map<std::int64_t, std::vector<AgentState>> executed;

  for (std::size_t call = 0; call < calls; ++call) {
    SceneRollout plan = generate(scene, conditions, replan_seed(seed, call), pass);
    std::map<std::int64_t, std::vector<AgentState>> steps;
    for (const RolloutAgent& ra : plan.agents) {
      std::vector<AgentState>& s = steps[ra.id];
      const auto& states = ra.trajectory.states;
      for (std::size_t t = 0; t < replan_interval; ++t) {
        if (t < states.size()) {
          s.push_back(states[t]);
        } else {
          AgentState next = s.empty() ? scene.agent(ra.id).current() : s.back();
          next.position = next.position + next.velocity * scene.dt;
          s.push_back(next);
        }
      }
      auto& log = executed[ra.id];
      log.insert(log.end(), s.begin(), s.end());
    }
    for (Agent& a : scene.agents) {
      const auto it = steps.find(a.id);
      if (it != steps.end()) {
        a.history.insert(a.history.end(), it->second.begin(), it->second.end());
      } else {
        a.history.insert(a.history.end(), replan_interval, a.current());
      }
    }
    if (call == 0) out.routing = plan.routing;
    if (call + 1 == calls) {
      out.agents = std::move(plan.agents);
      for (RolloutAgent& ra : out.agents) ra.trajectory.states = executed.at(ra.id);
    }
  }
  return out;
}

Trajectory trajectory_from_positions(std::span<const Vec2> positions, const AgentState& start, double dt) {
  const Kinematics k = kinematics_from_positions(positions, start.position, start.heading, dt);
  Trajectory t;
  t.dt = dt;
  Vec2 prev = start.position;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    AgentState s = start;
    s.position = positions[i];
    s.velocity = (positions[i] - prev) * (1.0 / dt);
    s.heading = wrap_angle(k.heading[i]);
    s.valid = true;
    prev = positions[i];
    t.states.push_back(s);
  }
  return t;
}

std::vector<ClosedLoopResult> closed_loop_study(const MixtureOfExperts& experts, std::span<const Scenario> scenarios,
                                                std::span<const std::size_t> intervals, std::size_t horizon_steps,
                                                std::uint64_t seed, bool condition_ego) {
  if (scenarios.empty()) throw ValidationError("closed-loop study needs at least one scenario");
  std::vector<ClosedLoopResult> out;
  for (std::size_t interval : intervals) {
    ClosedLoopResult r;
    r.replan_interval = interval;
    for (std::size_t i = 0; i < scenarios.size(); ++i) {
      ConditionMap cond;
      if (condition_ego) {
        const Agent& ego = scenarios[i].agent(scenarios[i].ego_id);
        cond[ego.id] = condition_from_endpoint(ego);
      }
      r.rollouts.push_back(experts.rollout_closed_loop(scenarios[i], cond, horizon_steps, interval, seed + i));
    }
    r.collision_rate = scenario_collision_rate(r.rollouts);
    out.push_back(std::move(r));
  }
  return out;
}

nlohmann::json closed_loop_report(std::span<const ClosedLoopResult> results, std::size_t horizon_steps, double dt) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : results) {
    rows.push_back({{"replan_interval", r.replan_interval},
                    {"seconds", static_cast<double>(r.replan_interval) * dt},
                    {"collision_rate", r.collision_rate},
                    {"scenarios", r.rollouts.size()}});
  }
  return {{"horizon_steps", horizon_steps}, {"rows", rows}};
}

std::uint64_t replan_seed(std::uint64_t seed, std::size_t call) {
  return call == 0 ? seed : Rng(seed).derive(call).seed();
}

}  // namespace dragtraffic
