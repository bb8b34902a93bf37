#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dragtraffic/nn/tensor.hpp"

namespace dragtraffic {

inline constexpr double kDt = 0.1;                ///< seconds per step
inline constexpr std::size_t kFutureSteps = 60;   ///< 6 s horizon
inline constexpr std::size_t kLaneAttributes = 4; ///< {lane, intersection, crosswalk, edge}
inline constexpr std::size_t kMaxAgents = 32;
inline constexpr double kCropHalfExtent = 60.0;   ///< 120 m square
inline constexpr std::size_t kAgentFeatures = 11;
inline constexpr std::size_t kLaneFeatures = 4 + kLaneAttributes;
inline constexpr std::size_t kConditionDim = 8;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  double cross(Vec2 o) const { return x * o.y - y * o.x; }
  double norm() const { return std::hypot(x, y); }
  Vec2 rotated(double angle) const {
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    return {c * x - s * y, s * x + c * y};
  }
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

enum class AgentType : std::uint8_t { Vehicle = 0, Pedestrian = 1, Cyclist = 2 };
inline constexpr std::array<AgentType, 3> kAgentTypes = {AgentType::Vehicle, AgentType::Pedestrian,
                                                         AgentType::Cyclist};

std::string_view to_string(AgentType type);
/// Throws ValidationError for unknown tags.
AgentType parse_agent_type(std::string_view tag);

/// Wraps into (-pi, pi].
double wrap_angle(double angle);

enum class LaneAttribute : std::uint8_t { Lane = 0, Intersection = 1, Crosswalk = 2, Edge = 3 };
using SegmentAttributes = std::array<double, kLaneAttributes>;
SegmentAttributes one_hot(LaneAttribute attribute);

struct AgentState {
  Vec2 position;
  Vec2 velocity;
  double heading = 0.0;
  double length = 4.5;
  double width = 1.9;
  AgentType type = AgentType::Vehicle;
  bool valid = true;

  double speed() const { return velocity.norm(); }
  /// Throws ValidationError naming the violated invariant. Invalid (absent)
  /// states are not checked beyond finiteness.
  void validate() const;
  friend bool operator==(const AgentState&, const AgentState&) = default;
};

struct Trajectory {
  std::vector<AgentState> states;
  double dt = kDt;

  std::size_t size() const { return states.size(); }
  std::vector<Vec2> positions() const;
  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

struct Lane {
  std::int64_t id = 0;
  std::vector<Vec2> points;                   ///< segment midpoints, metres
  std::vector<SegmentAttributes> attributes;  ///< one per point
  friend bool operator==(const Lane&, const Lane&) = default;
};

struct RoadMap {
  std::vector<Lane> lanes;
  std::size_t segment_count() const;
  friend bool operator==(const RoadMap&, const RoadMap&) = default;
};

struct Agent {
  std::int64_t id = 0;
  AgentType type = AgentType::Vehicle;
  double length = 4.5;
  double width = 1.9;
  std::vector<AgentState> history;  ///< oldest first; back() is the current state
  std::optional<Trajectory> future;

  const AgentState& current() const { return history.back(); }
  AgentState& current() { return history.back(); }
  friend bool operator==(const Agent&, const Agent&) = default;
};

/// Provenance of windowed records produced by preprocessing.
struct ScenarioMeta {
  std::string source_id;
  int window = -1;  ///< -1 for raw recordings
  int raw_agent_count = 0;
  std::optional<AgentType> center_type;
  friend bool operator==(const ScenarioMeta&, const ScenarioMeta&) = default;
};

struct Scenario {
  std::string id;
  ScenarioMeta meta;
  RoadMap map;
  std::vector<Agent> agents;
  std::int64_t ego_id = 0;
  double dt = kDt;

  const Agent& agent(std::int64_t agent_id) const;
  Agent& agent(std::int64_t agent_id);
  bool has_agent(std::int64_t agent_id) const;
  /// Checks ego presence, history alignment, lane shapes and per-state invariants.
  void validate() const;
  friend bool operator==(const Scenario&, const Scenario&) = default;
};

/// Target descriptor for one agent's future. `valid == false` means unconditioned.
struct ConditionContext {
  Vec2 target_position;
  double target_speed = 0.0;
  double target_heading = 0.0;
  double length = 0.0;
  double width = 0.0;
  bool valid = false;
  friend bool operator==(const ConditionContext&, const ConditionContext&) = default;
};

/// Rigid 2-D frame: local = R(-rotation) (p - origin).
struct AgentFrame {
  Vec2 origin;
  double rotation = 0.0;

  Vec2 to_local(Vec2 p) const { return (p - origin).rotated(-rotation); }
  Vec2 to_global(Vec2 p) const { return p.rotated(rotation) + origin; }
  Vec2 direction_to_local(Vec2 v) const { return v.rotated(-rotation); }
  Vec2 direction_to_global(Vec2 v) const { return v.rotated(rotation); }
  AgentState to_local(const AgentState& s) const;
  AgentState to_global(const AgentState& s) const;
};

/// Keeps lane points and agents whose current position falls inside the
/// axis-aligned square of `frame`; coordinates stay global. `keep_id` is kept
/// regardless and becomes the ego.
Scenario crop_scenario(const Scenario& scenario, const AgentFrame& frame, std::int64_t keep_id,
                       double crop_half = kCropHalfExtent);

/// Re-expresses the scenario around one agent (at the origin, heading 0), crops
/// map and agents to the axis-aligned square of half extent `crop_half`, and
/// sets ego_id to that agent.
std::pair<Scenario, AgentFrame> to_agent_frame(const Scenario& scenario, std::int64_t agent_id,
                                               double crop_half = kCropHalfExtent);

Trajectory to_agent_frame(const Trajectory& traj, const AgentFrame& frame);
Trajectory from_agent_frame(const Trajectory& traj, const AgentFrame& frame);

/// 8-dim condition row in the agent frame:
/// [x, y, speed, cos heading, sin heading, length, width, valid].
std::array<double, kConditionDim> condition_vector(const ConditionContext& condition, const AgentFrame& frame);

/// Condition taken from the agent's ground-truth final future state.
ConditionContext condition_from_endpoint(const Agent& agent);

struct VectorizeOptions {
  std::size_t history_len = 1;
  std::size_t max_agents = kMaxAgents;
  std::size_t max_lane_segments = 96;
};

/// Padded feature tensors of one agent-centric scene. Row 0 of `agents` is the
/// target (ego) agent.
struct VectorizedScene {
  nn::Tensor agents;  ///< max_agents x (history_len * kAgentFeatures)
  std::vector<std::uint8_t> agent_mask;
  nn::Tensor lanes;   ///< max_lane_segments x kLaneFeatures
  std::vector<std::uint8_t> lane_mask;
  std::vector<std::int64_t> agent_ids;  ///< ids of unpadded rows, in row order
};

VectorizedScene vectorize(const Scenario& local, const VectorizeOptions& options = {});

}  // namespace dragtraffic
