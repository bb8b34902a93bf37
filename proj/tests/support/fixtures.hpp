#pragma once

#include <cmath>
#include <string>

#include "dragtraffic/rng.hpp"
#include "dragtraffic/scene.hpp"

namespace dragtraffic::testing {

inline Agent moving_agent(std::int64_t id, Vec2 p, double heading, double speed,
                          AgentType type = AgentType::Vehicle) {
  Agent a;
  a.id = id;
  a.type = type;
  if (type == AgentType::Pedestrian) {
    a.length = 0.6;
    a.width = 0.6;
  } else if (type == AgentType::Cyclist) {
    a.length = 1.8;
    a.width = 0.7;
  }
  AgentState s;
  s.position = p;
  s.heading = heading;
  s.velocity = Vec2{std::cos(heading), std::sin(heading)} * speed;
  s.length = a.length;
  s.width = a.width;
  s.type = type;
  a.history = {s};
  return a;
}

/// Two-lane east-west road with a handful of randomly placed vehicles; agent 0
/// sits at the origin heading east. Every agent gets a constant-velocity future.
inline Scenario road_scene(Rng& rng, std::size_t agents = 6) {
  Scenario s;
  s.id = "road-" + std::to_string(rng.uniform_int(0, 1 << 30));
  for (int lane = 0; lane < 2; ++lane) {
    Lane l;
    l.id = lane;
    for (int k = -50; k <= 50; k += 5) {
      l.points.push_back({static_cast<double>(k), lane * 3.5});
      l.attributes.push_back(one_hot(LaneAttribute::Lane));
    }
    s.map.lanes.push_back(l);
  }
  s.agents.push_back(moving_agent(0, {0, 0}, 0.0, rng.uniform(5, 12)));
  for (std::size_t i = 1; i < agents; ++i) {
    const double dir = rng.bernoulli(0.5) ? 0.0 : 3.14159;
    s.agents.push_back(moving_agent(static_cast<std::int64_t>(i), {rng.uniform(-40, 40), rng.uniform(-2, 5)},
                                    wrap_angle(dir + rng.uniform(-0.1, 0.1)), rng.uniform(0, 12)));
  }
  for (Agent& a : s.agents) {
    Trajectory f;
    AgentState st = a.current();
    for (std::size_t t = 0; t < kFutureSteps; ++t) {
      st.position = st.position + st.velocity * kDt;
      f.states.push_back(st);
    }
    a.future = f;
  }
  s.ego_id = 0;
  return s;
}

}  // namespace dragtraffic::testing
