#include "dragtraffic/scene.hpp"

#include <algorithm>
#include <numbers>
#include <numeric>
#include <set>

#include "dragtraffic/error.hpp"

namespace dragtraffic {

std::string_view to_string(AgentType type) {
  switch (type) {
    case AgentType::Vehicle:
      return "vehicle";
    case AgentType::Pedestrian:
      return "pedestrian";
    case AgentType::Cyclist:
      return "cyclist";
  }
  return "unknown";
}

AgentType parse_agent_type(std::string_view tag) {
  for (AgentType t : kAgentTypes) {
    if (to_string(t) == tag) return t;
  }
  throw ValidationError("unknown agent type '" + std::string(tag) + "'");
}

double wrap_angle(double angle) {
  constexpr double kPi = std::numbers::pi;
  double a = std::remainder(angle, 2.0 * kPi);  // [-pi, pi]
  if (a <= -kPi) a += 2.0 * kPi;
  return a;
}

SegmentAttributes one_hot(LaneAttribute attribute) {
  SegmentAttributes a{};
  a[static_cast<std::size_t>(attribute)] = 1.0;
  return a;
}

void AgentState::validate() const {
  const bool finite = std::isfinite(position.x) && std::isfinite(position.y) && std::isfinite(velocity.x) &&
                      std::isfinite(velocity.y) && std::isfinite(heading) && std::isfinite(length) &&
                      std::isfinite(width);
  if (!finite) throw ValidationError("agent state has non-finite fields");
  if (!valid) return;
  if (!(width > 0.0)) throw ValidationError("width must be > 0");
  if (!(length >= width)) throw ValidationError("length must be >= width");
  if (heading > std::numbers::pi || heading <= -std::numbers::pi) {
    throw ValidationError("heading must lie in (-pi, pi]");
  }
}

std::vector<Vec2> Trajectory::positions() const {
  std::vector<Vec2> out;
  out.reserve(states.size());
  for (const auto& s : states) out.push_back(s.position);
  return out;
}

std::size_t RoadMap::segment_count() const {
  return std::accumulate(lanes.begin(), lanes.end(), std::size_t{0},
                         [](std::size_t n, const Lane& l) { return n + l.points.size(); });
}

const Agent& Scenario::agent(std::int64_t agent_id) const {
  for (const auto& a : agents) {
    if (a.id == agent_id) return a;
  }
  throw NotFoundError("unknown agent id " + std::to_string(agent_id) + " in scenario '" + id + "'");
}

Agent& Scenario::agent(std::int64_t agent_id) {
  return const_cast<Agent&>(static_cast<const Scenario&>(*this).agent(agent_id));
}

bool Scenario::has_agent(std::int64_t agent_id) const {
  return std::any_of(agents.begin(), agents.end(), [&](const Agent& a) { return a.id == agent_id; });
}

void Scenario::validate() const {
  if (!has_agent(ego_id)) throw ValidationError("scenario '" + id + "': ego id " + std::to_string(ego_id) + " not among agents");
  std::set<std::int64_t> ids;
  const std::size_t steps = agents.empty() ? 0 : agents.front().history.size();
  for (const auto& a : agents) {
    const std::string where = "scenario '" + id + "' agent " + std::to_string(a.id) + ": ";
    if (!ids.insert(a.id).second) throw ValidationError(where + "duplicate id");
    if (a.history.empty()) throw ValidationError(where + "empty history");
    if (a.history.size() != steps) throw ValidationError(where + "history not aligned to the scenario timestep grid");
    try {
      for (const auto& s : a.history) s.validate();
      if (a.future) {
        for (const auto& s : a.future->states) s.validate();
      }
    } catch (const ValidationError& e) {
      throw ValidationError(where + e.what());
    }
  }
  for (const auto& lane : map.lanes) {
    if (lane.points.empty()) throw ValidationError("lane " + std::to_string(lane.id) + " has no segments");
    if (lane.attributes.size() != lane.points.size()) {
      throw ValidationError("lane " + std::to_string(lane.id) + " attribute count does not match segment count");
    }
  }
}

AgentState AgentFrame::to_local(const AgentState& s) const {
  AgentState out = s;
  out.position = to_local(s.position);
  out.velocity = direction_to_local(s.velocity);
  out.heading = wrap_angle(s.heading - rotation);
  return out;
}

AgentState AgentFrame::to_global(const AgentState& s) const {
  AgentState out = s;
  out.position = to_global(s.position);
  out.velocity = direction_to_global(s.velocity);
  out.heading = wrap_angle(s.heading + rotation);
  return out;
}

namespace {

bool inside(Vec2 p, double half) { return std::abs(p.x) <= half && std::abs(p.y) <= half; }

}  // namespace

Scenario crop_scenario(const Scenario& scenario, const AgentFrame& frame, std::int64_t keep_id, double crop_half) {
  Scenario out;
  out.id = scenario.id;
  out.meta = scenario.meta;
  out.dt = scenario.dt;
  out.ego_id = keep_id;
  for (const auto& lane : scenario.map.lanes) {
    Lane kept{lane.id, {}, {}};
    for (std::size_t i = 0; i < lane.points.size(); ++i) {
      if (!inside(frame.to_local(lane.points[i]), crop_half)) continue;
      kept.points.push_back(lane.points[i]);
      kept.attributes.push_back(lane.attributes[i]);
    }
    if (!kept.points.empty()) out.map.lanes.push_back(std::move(kept));
  }
  for (const auto& a : scenario.agents) {
    if (a.id != keep_id) {
      if (!a.current().valid || !inside(frame.to_local(a.current().position), crop_half)) continue;
    }
    out.agents.push_back(a);
  }
  return out;
}

std::pair<Scenario, AgentFrame> to_agent_frame(const Scenario& scenario, std::int64_t agent_id, double crop_half) {
  const Agent& target = scenario.agent(agent_id);
  if (!target.current().valid) {
    throw ValidationError("agent " + std::to_string(agent_id) + " has no valid current state");
  }
  const AgentFrame frame{target.current().position, target.current().heading};
  Scenario out = crop_scenario(scenario, frame, agent_id, crop_half);
  for (auto& lane : out.map.lanes) {
    for (auto& p : lane.points) p = frame.to_local(p);
  }
  for (auto& a : out.agents) {
    for (auto& s : a.history) s = frame.to_local(s);
    if (a.future) {
      for (auto& s : a.future->states) s = frame.to_local(s);
    }
  }
  return {std::move(out), frame};
}

Trajectory to_agent_frame(const Trajectory& traj, const AgentFrame& frame) {
  Trajectory out = traj;
  for (auto& s : out.states) s = frame.to_local(s);
  return out;
}

Trajectory from_agent_frame(const Trajectory& traj, const AgentFrame& frame) {
  Trajectory out = traj;
  for (auto& s : out.states) s = frame.to_global(s);
  return out;
}

std::array<double, kConditionDim> condition_vector(const ConditionContext& condition, const AgentFrame& frame) {
  if (!condition.valid) return {};
  const Vec2 p = frame.to_local(condition.target_position);
  const double h = condition.target_heading - frame.rotation;
  return {p.x, p.y, condition.target_speed, std::cos(h), std::sin(h), condition.length, condition.width, 1.0};
}

ConditionContext condition_from_endpoint(const Agent& agent) {
  if (!agent.future || agent.future->states.empty() || !agent.future->states.back().valid) {
    throw ValidationError("agent " + std::to_string(agent.id) + " has no valid ground-truth endpoint");
  }
  const AgentState& end = agent.future->states.back();
  return ConditionContext{end.position, end.speed(), end.heading, agent.length, agent.width, true};
}

VectorizedScene vectorize(const Scenario& local, const VectorizeOptions& options) {
  if (options.max_agents == 0 || options.history_len == 0) throw ValidationError("vectorize: empty padding target");
  if (!local.has_agent(local.ego_id) || !local.agent(local.ego_id).current().valid) {
    throw ValidationError("vectorize: scenario '" + local.id + "' has no valid target agent");
  }
  VectorizedScene out;
  const std::size_t width = options.history_len * kAgentFeatures;
  out.agents = nn::Tensor::matrix(options.max_agents, width);
  out.agent_mask.assign(options.max_agents, 0);

  // Target first, then the nearest valid agents; ties broken by id.
  std::vector<const Agent*> order;
  for (const auto& a : local.agents) {
    if (a.id != local.ego_id && a.current().valid) order.push_back(&a);
  }
  std::sort(order.begin(), order.end(), [](const Agent* a, const Agent* b) {
    const double da = a->current().position.norm();
    const double db = b->current().position.norm();
    return da != db ? da < db : a->id < b->id;
  });
  order.insert(order.begin(), &local.agent(local.ego_id));
  if (order.size() > options.max_agents) order.resize(options.max_agents);

  for (std::size_t row = 0; row < order.size(); ++row) {
    const Agent& a = *order[row];
    out.agent_mask[row] = 1;
    out.agent_ids.push_back(a.id);
    const std::size_t n = a.history.size();
    for (std::size_t k = 0; k < options.history_len; ++k) {
      // Slot k holds history step n - history_len + k; earlier slots stay zero.
      if (k + n < options.history_len) continue;
      const AgentState& s = a.history[n - options.history_len + k];
      if (!s.valid) continue;
      double* f = &out.agents(row, k * kAgentFeatures);
      f[0] = s.position.x;
      f[1] = s.position.y;
      f[2] = s.velocity.x;
      f[3] = s.velocity.y;
      f[4] = std::cos(s.heading);
      f[5] = std::sin(s.heading);
      f[6] = s.length;
      f[7] = s.width;
      f[8 + static_cast<std::size_t>(a.type)] = 1.0;
    }
  }

  struct Segment {
    double dist;
    std::size_t order;
    std::array<double, kLaneFeatures> features;
  };
  std::vector<Segment> segments;
  for (const auto& lane : local.map.lanes) {
    const auto& pts = lane.points;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      Vec2 dir{};
      if (pts.size() > 1) {
        const Vec2 d = i + 1 < pts.size() ? pts[i + 1] - pts[i] : pts[i] - pts[i - 1];
        const double len = d.norm();
        if (len > 0.0) dir = d * (1.0 / len);
      }
      std::array<double, kLaneFeatures> f{pts[i].x, pts[i].y, dir.x, dir.y};
      std::copy(lane.attributes[i].begin(), lane.attributes[i].end(), f.begin() + 4);
      segments.push_back({pts[i].norm(), segments.size(), f});
    }
  }
  if (segments.size() > options.max_lane_segments) {
    std::stable_sort(segments.begin(), segments.end(), [](const Segment& a, const Segment& b) { return a.dist < b.dist; });
    segments.resize(options.max_lane_segments);
    std::sort(segments.begin(), segments.end(), [](const Segment& a, const Segment& b) { return a.order < b.order; });
  }
  out.lanes = nn::Tensor::matrix(options.max_lane_segments, kLaneFeatures);
  out.lane_mask.assign(options.max_lane_segments, 0);
  for (std::size_t i = 0; i < segments.size(); ++i) {
    std::copy(segments[i].features.begin(), segments[i].features.end(), &out.lanes(i, 0));
    out.lane_mask[i] = 1;
  }
  return out;
}

}  // namespace dragtraffic
