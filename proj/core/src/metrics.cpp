#include "dragtraffic/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dragtraffic/error.hpp"

namespace dragtraffic {

namespace {

void check_lengths(const TrajectoryBatch& batch, std::span<const Vec2> gt) {
  if (batch.modes.empty()) throw ValidationError("trajectory batch has no modes");
  if (gt.size() < 2) throw ValidationError("trajectories need at least two steps");
  for (const auto& mode : batch.modes) {
    if (mode.size() != gt.size()) {
      throw ValidationError("mode has " + std::to_string(mode.size()) + " steps, ground truth has " +
                            std::to_string(gt.size()));
    }
  }
}

double signed_area(std::span<const Vec2> p) {
  double a = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) a += p[i].cross(p[(i + 1) % p.size()]);
  return 0.5 * a;
}

}  // namespace

std::size_t endpoint_closest_mode(const TrajectoryBatch& batch, std::span<const Vec2> gt) {
  check_lengths(batch, gt);
  const std::size_t end = gt.size() - 2;
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < batch.modes.size(); ++k) {
    const double d = (batch.modes[k][end] - gt[end]).norm();
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

double min_ade_k(const TrajectoryBatch& batch, std::span<const Vec2> gt) {
  const auto& mode = batch.modes[endpoint_closest_mode(batch, gt)];
  double total = 0.0;
  for (std::size_t t = 0; t < gt.size(); ++t) total += (mode[t] - gt[t]).norm();
  return total / static_cast<double>(gt.size());
}

double min_fde_k(const TrajectoryBatch& batch, std::span<const Vec2> gt) {
  const auto& mode = batch.modes[endpoint_closest_mode(batch, gt)];
  return (mode[gt.size() - 2] - gt[gt.size() - 2]).norm();
}

Kinematics kinematics_from_positions(std::span<const Vec2> positions, Vec2 start, double start_heading, double dt) {
  Kinematics k;
  double heading = start_heading;
  Vec2 prev = start;
  for (const Vec2& p : positions) {
    const Vec2 d = p - prev;
    const double dist = d.norm();
    const bool moving = dist >= kStationaryThreshold;
    if (moving) heading = std::atan2(d.y, d.x);
    k.heading.push_back(heading);
    k.speed.push_back(dist / dt);
    k.moving.push_back(moving);
    prev = p;
  }
  return k;
}

double heading_difference(double a, double b) { return std::abs(wrap_angle(a - b)); }

KinematicError kinematic_error(std::span<const Vec2> mode, std::span<const Vec2> gt, Vec2 start, double start_heading,
                               KinematicAverage average, double dt) {
  if (mode.size() != gt.size() || gt.empty()) throw ValidationError("kinematic error needs equal, non-empty trajectories");
  const Kinematics a = kinematics_from_positions(mode, start, start_heading, dt);
  const Kinematics b = kinematics_from_positions(gt, start, start_heading, dt);
  KinematicError err;
  const std::size_t first = average == KinematicAverage::Endpoint ? gt.size() - 1 : 0;
  std::size_t heading_steps = 0;
  for (std::size_t t = first; t < gt.size(); ++t) {
    err.speed += std::abs(a.speed[t] - b.speed[t]);
    if (a.moving[t] || b.moving[t]) {
      err.heading += heading_difference(a.heading[t], b.heading[t]);
      ++heading_steps;
    }
  }
  err.speed /= static_cast<double>(gt.size() - first);
  if (heading_steps == 0) {
    err.degenerate = true;
  } else {
    err.heading /= static_cast<double>(heading_steps);
  }
  return err;
}

std::array<Vec2, 4> OrientedBox::corners() const {
  const Vec2 f = Vec2{std::cos(heading), std::sin(heading)} * (0.5 * length);
  const Vec2 s = Vec2{-std::sin(heading), std::cos(heading)} * (0.5 * width);
  return {center + f + s * -1.0, center + f + s, center - f + s, center - f - s};
}

double polygon_area(std::span<const Vec2> polygon) { return std::abs(signed_area(polygon)); }

std::vector<Vec2> clip_convex(std::span<const Vec2> subject, std::span<const Vec2> clip) {
  std::vector<Vec2> out(subject.begin(), subject.end());
  for (std::size_t e = 0; e < clip.size() && !out.empty(); ++e) {
    const Vec2 a = clip[e];
    const Vec2 b = clip[(e + 1) % clip.size()];
    const Vec2 edge = b - a;
    auto inside = [&](Vec2 p) { return edge.cross(p - a) >= 0.0; };
    std::vector<Vec2> input = std::move(out);
    out.clear();
    for (std::size_t i = 0; i < input.size(); ++i) {
      const Vec2 cur = input[i];
      const Vec2 prev = input[(i + input.size() - 1) % input.size()];
      const bool cur_in = inside(cur);
      const bool prev_in = inside(prev);
      if (cur_in != prev_in) {
        const Vec2 d = cur - prev;
        const double denom = edge.cross(d);
        if (denom != 0.0) {
          const double t = edge.cross(a - prev) / denom;
          out.push_back(prev + d * t);
        }
      }
      if (cur_in) out.push_back(cur);
    }
  }
  return out;
}

double obb_iou(const OrientedBox& a, const OrientedBox& b) {
  const double ra = 0.5 * std::hypot(a.length, a.width);
  const double rb = 0.5 * std::hypot(b.length, b.width);
  if ((a.center - b.center).norm() > ra + rb) return 0.0;
  const auto pa = a.corners();
  const auto pb = b.corners();
  const std::vector<Vec2> inter = clip_convex(pa, pb);
  const double i = inter.size() < 3 ? 0.0 : polygon_area(inter);
  const double u = a.length * a.width + b.length * b.width - i;
  return u > 0.0 ? std::clamp(i / u, 0.0, 1.0) : 0.0;
}

std::size_t colliding_agents(const SceneRollout& rollout, double threshold) {
  const std::size_t n = rollout.agents.size();
  std::vector<std::uint8_t> hit(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (hit[i] && hit[j]) continue;
      const auto& ti = rollout.agents[i].trajectory.states;
      const auto& tj = rollout.agents[j].trajectory.states;
      const std::size_t steps = std::min(ti.size(), tj.size());
      for (std::size_t t = 0; t < steps; ++t) {
        if (!ti[t].valid || !tj[t].valid) continue;
        const OrientedBox a{ti[t].position, ti[t].heading, rollout.agents[i].length, rollout.agents[i].width};
        const OrientedBox b{tj[t].position, tj[t].heading, rollout.agents[j].length, rollout.agents[j].width};
        if (obb_iou(a, b) > threshold) {
          hit[i] = hit[j] = 1;
          break;
        }
      }
    }
  }
  return static_cast<std::size_t>(std::count(hit.begin(), hit.end(), 1));
}

double scenario_collision_rate(std::span<const SceneRollout> rollouts, double threshold) {
  if (rollouts.empty()) throw ValidationError("collision rate needs at least one rollout");
  if (!(threshold > 0.0 && threshold <= 1.0)) throw ValidationError("IOU threshold must lie in (0, 1]");
  double total = 0.0;
  for (const auto& r : rollouts) {
    if (!r.agents.empty()) {
      total += static_cast<double>(colliding_agents(r, threshold)) / static_cast<double>(r.agents.size());
    }
  }
  return 100.0 * total / static_cast<double>(rollouts.size());
}

}  // namespace dragtraffic
