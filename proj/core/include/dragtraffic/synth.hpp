#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dragtraffic/scene.hpp"

namespace dragtraffic {

enum class Behavior : std::uint8_t { Straight, LeftTurn, RightTurn, Stop, Yield, CrossingPedestrian, CyclistMerge };
inline constexpr std::array<Behavior, 7> kBehaviors = {Behavior::Straight, Behavior::LeftTurn,
                                                       Behavior::RightTurn, Behavior::Stop,
                                                       Behavior::Yield, Behavior::CrossingPedestrian,
                                                       Behavior::CyclistMerge};

std::string_view to_string(Behavior b);
Behavior parse_behavior(std::string_view tag);
AgentType agent_type_of(Behavior b);

enum class MapTemplate : std::uint8_t { StraightRoad, Intersection };

struct SynthConfig {
  std::uint64_t seed = 0;
  std::size_t count = 100;
  std::size_t agents_per_scene = 36;   ///< at least kMaxAgents
  std::size_t frames = kFutureSteps + 1;  ///< frames per recording (201 for 20 s)
  std::map<Behavior, double> mix = default_mix();
  double intersection_fraction = 0.5;
  double speed_noise = 0.3;  ///< amplitude of the acceleration perturbation, m/s^2

  static std::map<Behavior, double> default_mix();
  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
};

struct SynthAgentInfo {
  std::int64_t agent_id = 0;
  Behavior behavior = Behavior::Straight;
};

struct SynthScene {
  Scenario scenario;
  MapTemplate map = MapTemplate::StraightRoad;
  std::vector<SynthAgentInfo> behaviors;
};

/// Raw recordings: every agent's history covers all frames; agent 0 is the
/// ego vehicle. Behaviours are assigned by stratified quotas so corpus-level
/// counts follow the mix up to rounding.
std::vector<SynthScene> synthesize(const SynthConfig& config);
std::vector<Scenario> synthesize_scenarios(const SynthConfig& config);

}  // namespace dragtraffic
