#pragma once

#include <string>
#include <vector>

#include "dragtraffic/scene.hpp"

namespace dragtraffic::testing {

// One agent per id, `frames` states moving east at 5 m/s from `origin`.
inline Agent track(std::int64_t id, AgentType type, Vec2 origin, std::size_t frames) {
  Agent a;
  a.id = id;
  a.type = type;
  if (type != AgentType::Vehicle) {
    a.length = 1.0;
    a.width = 0.5;
  }
  for (std::size_t t = 0; t < frames; ++t) {
    AgentState s;
    s.position = origin + Vec2{0.5 * static_cast<double>(t), 0.0};
    s.velocity = {5.0, 0.0};
    s.length = a.length;
    s.width = a.width;
    s.type = type;
    a.history.push_back(s);
  }
  return a;
}

inline Scenario recording(const std::string& id, std::size_t frames, std::size_t vehicles) {
  Scenario s;
  s.id = id;
  s.meta.source_id = id;
  Lane lane;
  for (int x = -200; x <= 300; x += 10) {
    lane.points.push_back({static_cast<double>(x), 0.0});
    lane.attributes.push_back(one_hot(LaneAttribute::Lane));
  }
  s.map.lanes.push_back(lane);
  for (std::size_t i = 0; i < vehicles; ++i) {
    s.agents.push_back(track(static_cast<std::int64_t>(i), AgentType::Vehicle, {2.0 * i, 3.0}, frames));
  }
  return s;
}

// Hand-built raw corpus covering every filter rule:
//   rec-a (201 frames, 34 agents): 3 windows.
//     w0: vehicle, pedestrian, cyclist all survive.
//     w1: pedestrian valid only on frames 60..80 -> min_frames;
//         cyclist invalid at frame 120 -> invalid_endpoint; vehicle survives.
//     w2: agents 3 and 4 absent on frames 120..180 -> 31 agents -> min_agents.
//   rec-b (61 frames, 31 agents): w0 -> min_agents.
//   rec-c (50 frames): too short for a window, no output and no drop.
//   rec-d (61 frames, 32 vehicles): vehicle survives, no pedestrian or cyclist.
inline std::vector<Scenario> filter_fixture() {
  Scenario a = recording("rec-a", 201, 31);
  a.agents.push_back(track(31, AgentType::Pedestrian, {0.0, -4.0}, 201));
  a.agents.push_back(track(32, AgentType::Cyclist, {10.0, -5.0}, 201));
  // Far away: counted for the agent threshold but cropped from records.
  a.agents.push_back(track(33, AgentType::Vehicle, {0.0, 150.0}, 201));
  for (std::size_t t = 81; t < 201; ++t) a.agent(31).history[t].valid = false;
  a.agent(32).history[120].valid = false;
  for (std::int64_t id : {3, 4}) {
    for (std::size_t t = 120; t <= 180; ++t) a.agent(id).history[t].valid = false;
  }
  Scenario c = recording("rec-c", 50, 40);
  return {a, recording("rec-b", 61, 31), c, recording("rec-d", 61, 32)};
}

}  // namespace dragtraffic::testing
