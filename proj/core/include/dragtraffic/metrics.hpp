#pragma once

#include <array>
#include <span>
#include <vector>

#include "dragtraffic/initializer.hpp"
#include "dragtraffic/rollout.hpp"
#include "dragtraffic/scene.hpp"

namespace dragtraffic {

/// Mode whose penultimate point is nearest the ground truth's penultimate
/// point (lowest index on ties). Throws ValidationError on length mismatch or
/// fewer than two steps.
std::size_t endpoint_closest_mode(const TrajectoryBatch& batch, std::span<const Vec2> gt);

/// Mean displacement of the endpoint-closest mode.
double min_ade_k(const TrajectoryBatch& batch, std::span<const Vec2> gt);
/// Displacement at the penultimate step of the endpoint-closest mode.
double min_fde_k(const TrajectoryBatch& batch, std::span<const Vec2> gt);

struct Kinematics {
  std::vector<double> heading;
  std::vector<double> speed;
  std::vector<std::uint8_t> moving;  ///< displacement of the step >= threshold
};

inline constexpr double kStationaryThreshold = 1e-3;

/// Per-step heading (atan2 of the step displacement) and speed from positions
/// starting at `start`; stationary steps inherit the previous heading.
Kinematics kinematics_from_positions(std::span<const Vec2> positions, Vec2 start, double start_heading,
                                     double dt = kDt);

/// |wrap(a - b)|
double heading_difference(double a, double b);

enum class KinematicAverage { Trajectory, Endpoint };

struct KinematicError {
  double heading = 0.0;  ///< radians
  double speed = 0.0;    ///< m/s
  bool degenerate = false;  ///< no step had motion in either trajectory
};

/// Heading and speed error of `mode` against `gt`, both starting at `start`.
/// Steps where both trajectories are stationary are skipped for heading.
KinematicError kinematic_error(std::span<const Vec2> mode, std::span<const Vec2> gt, Vec2 start, double start_heading,
                               KinematicAverage average = KinematicAverage::Trajectory, double dt = kDt);

struct OrientedBox {
  Vec2 center;
  double heading = 0.0;
  double length = 1.0;
  double width = 1.0;

  std::array<Vec2, 4> corners() const;
};

/// Polygon area of a simple polygon (absolute shoelace).
double polygon_area(std::span<const Vec2> polygon);
/// Intersection of two convex counter-clockwise polygons (Sutherland-Hodgman).
std::vector<Vec2> clip_convex(std::span<const Vec2> subject, std::span<const Vec2> clip);
double obb_iou(const OrientedBox& a, const OrientedBox& b);

inline constexpr double kDefaultCollisionIou = 0.1;

/// Percentage of agents per rollout whose box overlaps another agent's box at
/// the same step with IOU above `threshold`, averaged over rollouts.
/// Throws ValidationError for an empty list or a threshold outside (0, 1].
double scenario_collision_rate(std::span<const SceneRollout> rollouts, double threshold = kDefaultCollisionIou);
/// Number of colliding agents in one rollout.
std::size_t colliding_agents(const SceneRollout& rollout, double threshold = kDefaultCollisionIou);

}  // namespace dragtraffic
