#include "dragtraffic/rollout.hpp"

#include "dragtraffic/error.hpp"

namespace dragtraffic {

using nlohmann::json;

const RolloutAgent& SceneRollout::agent(std::int64_t id) const {
  for (const auto& a : agents) {
    if (a.id == id) return a;
  }
  throw NotFoundError("rollout has no agent " + std::to_string(id));
}

json condition_to_json(const ConditionContext& c) {
  return {{"target", {c.target_position.x, c.target_position.y}},
          {"speed", c.target_speed},
          {"heading", c.target_heading},
          {"length", c.length},
          {"width", c.width},
          {"valid", c.valid}};
}

ConditionContext condition_from_json(const json& j) {
  ConditionContext c;
  const auto& t = j.at("target");
  if (!t.is_array() || t.size() != 2) throw ValidationError("condition target must be [x, y]");
  c.target_position = {t[0].get<double>(), t[1].get<double>()};
  c.target_speed = j.value("speed", 0.0);
  c.target_heading = wrap_angle(j.value("heading", 0.0));
  c.length = j.value("length", 0.0);
  c.width = j.value("width", 0.0);
  c.valid = j.value("valid", true);
  return c;
}

json state_to_json(const AgentState& s) {
  return {{"x", s.position.x},   {"y", s.position.y},   {"vx", s.velocity.x}, {"vy", s.velocity.y},
          {"heading", s.heading}, {"valid", s.valid}};
}

AgentState state_from_json(const json& j, AgentType type) {
  AgentState s;
  s.type = type;
  s.valid = j.value("valid", true);
  s.position = {j.at("x").get<double>(), j.at("y").get<double>()};
  s.velocity = {j.value("vx", 0.0), j.value("vy", 0.0)};
  s.heading = j.at("heading").get<double>();
  return s;
}

namespace {

json batch_to_json(const TrajectoryBatch& b) {
  json modes = json::array();
  for (const auto& m : b.modes) {
    json pts = json::array();
    for (const Vec2& p : m) pts.push_back({p.x, p.y});
    modes.push_back(std::move(pts));
  }
  return {{"modes", std::move(modes)}, {"scores", b.scores}};
}

TrajectoryBatch batch_from_json(const json& j) {
  TrajectoryBatch b;
  for (const auto& m : j.at("modes")) {
    std::vector<Vec2> pts;
    for (const auto& p : m) pts.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    b.modes.push_back(std::move(pts));
  }
  b.scores = j.at("scores").get<std::vector<double>>();
  return b;
}

}  // namespace

json rollout_to_json(const SceneRollout& r) {
  json agents = json::array();
  for (const auto& a : r.agents) {
    json states = json::array();
    for (const auto& s : a.trajectory.states) states.push_back(state_to_json(s));
    json entry = {{"id", a.id},
                  {"type", std::string(to_string(a.type))},
                  {"length", a.length},
                  {"width", a.width},
                  {"dt", a.trajectory.dt},
                  {"trajectory", std::move(states)},
                  {"modes", batch_to_json(a.modes)},
                  {"chosen_mode", a.chosen_mode}};
    if (a.condition) entry["condition"] = condition_to_json(*a.condition);
    agents.push_back(std::move(entry));
  }
  json routing = json::array();
  for (const auto& e : r.routing) {
    routing.push_back({{"agent_id", e.agent_id}, {"agent_type", std::string(to_string(e.agent_type))}, {"expert", e.expert}});
  }
  return {{"schema", "dragtraffic.rollout/1"},
          {"scenario_id", r.scenario_id},
          {"seed", r.seed},
          {"horizon_steps", r.horizon_steps},
          {"replan_interval", r.replan_interval},
          {"generate_calls", r.generate_calls},
          {"agents", std::move(agents)},
          {"routing", std::move(routing)}};
}

SceneRollout rollout_from_json(const json& j) {
  if (j.value("schema", "") != "dragtraffic.rollout/1") throw SchemaError("unsupported rollout schema", 0);
  SceneRollout r;
  r.scenario_id = j.at("scenario_id").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.horizon_steps = j.at("horizon_steps").get<std::size_t>();
  r.replan_interval = j.at("replan_interval").get<std::size_t>();
  r.generate_calls = j.at("generate_calls").get<std::size_t>();
  for (const auto& a : j.at("agents")) {
    RolloutAgent ra;
    ra.id = a.at("id").get<std::int64_t>();
    ra.type = parse_agent_type(a.at("type").get<std::string>());
    ra.length = a.at("length").get<double>();
    ra.width = a.at("width").get<double>();
    ra.trajectory.dt = a.value("dt", kDt);
    for (const auto& s : a.at("trajectory")) {
      AgentState st = state_from_json(s, ra.type);
      st.length = ra.length;
      st.width = ra.width;
      ra.trajectory.states.push_back(st);
    }
    ra.modes = batch_from_json(a.at("modes"));
    ra.chosen_mode = a.at("chosen_mode").get<std::size_t>();
    if (a.contains("condition")) ra.condition = condition_from_json(a.at("condition"));
    r.agents.push_back(std::move(ra));
  }
  for (const auto& e : j.at("routing")) {
    r.routing.push_back({e.at("agent_id").get<std::int64_t>(), parse_agent_type(e.at("agent_type").get<std::string>()),
                         e.at("expert").get<std::string>()});
  }
  return r;
}

}  // namespace dragtraffic
