#include "dragtraffic/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numbers>

#include "dragtraffic/error.hpp"
#include "dragtraffic/metrics.hpp"
#include "dragtraffic/rng.hpp"

namespace dragtraffic {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kLaneWidth = 3.5;
constexpr double kRoadExtent = 150.0;
constexpr double kPointSpacing = 4.0;
constexpr int kSubsteps = 10;

struct Pose {
  Vec2 p;
  double h = 0.0;
};

using Curvature = std::function<double(double)>;  // of arc length

struct Plan {
  Pose start;
  Curvature curvature = [](double) { return 0.0; };
  std::vector<double> speed;  // per frame
};

// Clothoid entry, constant arc, clothoid exit; total heading change `angle`.
Curvature turn_profile(double s0, double radius, double sign, double transition, double angle = kPi / 2) {
  const double kappa = sign / radius;
  transition = std::min(transition, radius * angle);
  const double arc = radius * angle - transition;
  return [=](double s) {
    const double u = s - s0;
    if (u <= 0.0) return 0.0;
    if (u < transition) return kappa * u / transition;
    if (u < transition + arc) return kappa;
    if (u < 2 * transition + arc) return kappa * (1.0 - (u - transition - arc) / transition);
    return 0.0;
  };
}

// Sinusoidal curvature giving a lateral shift of `offset` over `length`.
Curvature merge_profile(double s0, double length, double offset) {
  const double a = 2.0 * kPi * offset / (length * length);
  return [=](double s) {
    const double u = s - s0;
    if (u <= 0.0 || u >= length) return 0.0;
    return a * std::sin(2.0 * kPi * u / length);
  };
}

// Speeds per frame from an acceleration schedule, with a smooth perturbation.
std::vector<double> speed_profile(std::size_t frames, double v0, const std::function<double(double, double)>& accel,
                                  double noise, Rng& rng, double v_max) {
  const double omega = rng.uniform(0.3, 1.0);
  const double phase = rng.uniform(0.0, 2 * kPi);
  std::vector<double> v(frames);
  v[0] = v0;
  for (std::size_t t = 1; t < frames; ++t) {
    const double time = static_cast<double>(t - 1) * kDt;
    double a = accel(time, v[t - 1]);
    if (v[t - 1] > 0.5) a += noise * std::sin(omega * time + phase);
    v[t] = std::clamp(v[t - 1] + a * kDt, 0.0, v_max);
  }
  return v;
}

std::vector<AgentState> integrate(const Plan& plan, const Agent& agent, std::size_t frames) {
  std::vector<AgentState> out;
  Pose pose = plan.start;
  double s = 0.0;
  for (std::size_t t = 0; t < frames; ++t) {
    if (t > 0) {
      const double v_avg = 0.5 * (plan.speed[t - 1] + plan.speed[t]);
      const double ds = v_avg * kDt / kSubsteps;
      for (int k = 0; k < kSubsteps; ++k) {
        const double dh = plan.curvature(s + 0.5 * ds) * ds;
        const double mid = pose.h + 0.5 * dh;
        pose.p = pose.p + Vec2{std::cos(mid), std::sin(mid)} * ds;
        pose.h += dh;
        s += ds;
      }
    }
    AgentState st;
    st.position = pose.p;
    st.heading = wrap_angle(pose.h);
    st.velocity = Vec2{std::cos(pose.h), std::sin(pose.h)} * plan.speed[t];
    st.length = agent.length;
    st.width = agent.width;
    st.type = agent.type;
    out.push_back(st);
  }
  return out;
}

Lane polyline(std::int64_t id, Vec2 from, Vec2 to, LaneAttribute attr,
              const std::function<bool(Vec2)>& in_junction = {}) {
  Lane lane;
  lane.id = id;
  const double len = (to - from).norm();
  const int n = std::max(1, static_cast<int>(std::round(len / kPointSpacing)));
  for (int i = 0; i <= n; ++i) {
    const Vec2 p = from + (to - from) * (static_cast<double>(i) / n);
    lane.points.push_back(p);
    lane.attributes.push_back(one_hot(in_junction && in_junction(p) ? LaneAttribute::Intersection : attr));
  }
  return lane;
}

Lane dense_polyline(std::int64_t id, Vec2 from, Vec2 to, double spacing, LaneAttribute attr) {
  Lane lane;
  lane.id = id;
  const int n = std::max(1, static_cast<int>(std::round((to - from).norm() / spacing)));
  for (int i = 0; i <= n; ++i) {
    lane.points.push_back(from + (to - from) * (static_cast<double>(i) / n));
    lane.attributes.push_back(one_hot(attr));
  }
  return lane;
}

// A directed travel corridor: points p(s) = origin + s * dir, lateral offset applied.
struct Corridor {
  Vec2 origin;  // point on the corridor at s = 0 (junction centre line)
  double heading = 0.0;
  Pose at(double s) const { return {origin + Vec2{std::cos(heading), std::sin(heading)} * s, heading}; }
};

struct MapLayout {
  RoadMap map;
  std::vector<Corridor> inner_lanes;   // vehicle lanes next to the centre line
  std::vector<Corridor> outer_lanes;   // right-most vehicle lanes
  std::vector<Corridor> shoulders;     // cyclist paths
  std::vector<std::pair<Vec2, Vec2>> crosswalks;  // kerb-to-kerb endpoints
};

MapLayout straight_road(Rng& rng) {
  MapLayout m;
  const double xc = rng.uniform(-30.0, 30.0);
  std::int64_t id = 0;
  for (double sgn : {1.0, -1.0}) {
    // sgn = 1: eastbound on y < 0; sgn = -1: westbound on y > 0.
    const double h = sgn > 0 ? 0.0 : kPi;
    for (int k = 0; k < 2; ++k) {
      const double y = -sgn * (0.5 + k) * kLaneWidth;
      m.map.lanes.push_back(polyline(id++, {-sgn * kRoadExtent, y}, {sgn * kRoadExtent, y}, LaneAttribute::Lane));
      Corridor c{{0.0, y}, h};
      (k == 0 ? m.inner_lanes : m.outer_lanes).push_back(c);
    }
    m.shoulders.push_back({{0.0, -sgn * (2 * kLaneWidth - 0.5)}, h});
    const double ye = -sgn * 2 * kLaneWidth;
    m.map.lanes.push_back(polyline(id++, {-sgn * kRoadExtent, ye}, {sgn * kRoadExtent, ye}, LaneAttribute::Edge));
  }
  m.map.lanes.push_back(dense_polyline(id++, {xc, -2 * kLaneWidth}, {xc, 2 * kLaneWidth}, 2.0, LaneAttribute::Crosswalk));
  m.crosswalks.push_back({{xc, -2 * kLaneWidth - 1.5}, {xc, 2 * kLaneWidth + 1.5}});
  return m;
}

MapLayout intersection() {
  MapLayout m;
  const double half = kLaneWidth;  // one lane each way
  const double box = 2 * kLaneWidth;
  auto in_box = [=](Vec2 p) { return std::abs(p.x) < box && std::abs(p.y) < box; };
  std::int64_t id = 0;
  for (int arm = 0; arm < 4; ++arm) {
    const double h = arm * kPi / 2;  // travel direction of the inbound lane after rotation
    const Vec2 dir{std::cos(h), std::sin(h)};
    const Vec2 right{std::sin(h), -std::cos(h)};
    // Lane travelling along `dir`, offset to its right by half a lane.
    const Vec2 off = right * (0.5 * kLaneWidth);
    m.map.lanes.push_back(polyline(id++, off - dir * kRoadExtent, off + dir * kRoadExtent, LaneAttribute::Lane, in_box));
    const Corridor c{off, h};
    m.inner_lanes.push_back(c);
    m.outer_lanes.push_back(c);
    m.shoulders.push_back({right * (half - 0.6), h});
    // Road edges on both sides of this arm's outbound half.
    for (double side : {1.0, -1.0}) {
      const Vec2 e = right * (side * half);
      m.map.lanes.push_back(polyline(id++, e + dir * box, e + dir * kRoadExtent, LaneAttribute::Edge));
    }
    const Vec2 cw = dir * (box + 2.0);
    m.map.lanes.push_back(dense_polyline(id++, cw - right * half, cw + right * half, 1.75, LaneAttribute::Crosswalk));
    m.crosswalks.push_back({cw - right * (half + 1.5), cw + right * (half + 1.5)});
  }
  return m;
}

struct Size {
  double length, width;
};

Size agent_size(AgentType type, Rng& rng) {
  switch (type) {
    case AgentType::Pedestrian: return {rng.uniform(0.5, 0.8), 0.5};
    case AgentType::Cyclist: return {rng.uniform(1.6, 1.9), rng.uniform(0.6, 0.8)};
    default: {
      const double l = rng.uniform(4.0, 5.2);
      return {l, rng.uniform(1.8, 2.1)};
    }
  }
}

Plan vehicle_plan(Behavior b, const MapLayout& m, MapTemplate tmpl, std::size_t frames, double noise, Rng& rng) {
  Plan plan;
  const bool turn = b == Behavior::LeftTurn || b == Behavior::RightTurn;
  const auto& lanes = b == Behavior::RightTurn ? m.outer_lanes : m.inner_lanes;
  const Corridor& lane = lanes[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(lanes.size()) - 1))];
  const double v_max = 16.0;
  if (turn) {
    const double v0 = rng.uniform(6.0, 10.0);
    const double radius = b == Behavior::LeftTurn ? rng.uniform(9.0, 13.0) : rng.uniform(5.5, 8.0);
    const double transition = rng.uniform(3.0, 6.0);
    const double sign = b == Behavior::LeftTurn ? 1.0 : -1.0;
    // Arc start ahead of the junction centre so that the exit lines up with the
    // crossing lane; on a straight road the turn leads into a side access.
    double lead = 0.0;
    if (tmpl == MapTemplate::Intersection) {
      lead = (b == Behavior::LeftTurn ? radius - 0.5 * kLaneWidth : radius + 0.5 * kLaneWidth) + 0.5 * transition;
    }
    const double d0 = lead + rng.uniform(0.0, 80.0);
    plan.start = lane.at(-d0);
    plan.curvature = turn_profile(d0 - lead, radius, sign, transition);
    plan.speed = speed_profile(frames, v0, [](double, double) { return 0.0; }, noise, rng, v_max);
    return plan;
  }
  plan.start = lane.at(-rng.uniform(-60.0, 120.0));
  const double v0 = rng.uniform(7.0, 14.0);
  if (b == Behavior::Stop) {
    const double t0 = rng.uniform(0.0, 2.0);
    const double decel = rng.uniform(1.5, 3.5);
    plan.speed = speed_profile(
        frames, v0, [=](double t, double v) { return t >= t0 && v > 0.0 ? -decel : 0.0; }, noise, rng, v_max);
  } else if (b == Behavior::Yield) {
    const double t0 = rng.uniform(0.0, 1.5);
    const double t1 = t0 + rng.uniform(1.5, 3.0);
    const double t2 = t1 + rng.uniform(0.5, 1.5);
    const double decel = rng.uniform(1.5, 3.0);
    plan.speed = speed_profile(
        frames, v0,
        [=](double t, double v) {
          if (t >= t0 && t < t1) return v > 1.0 ? -decel : 0.0;
          if (t >= t2) return 1.5;
          return 0.0;
        },
        noise, rng, v_max);
  } else {
    plan.speed = speed_profile(frames, v0, [](double, double) { return 0.0; }, noise, rng, v_max);
  }
  return plan;
}

Plan pedestrian_plan(const MapLayout& m, std::size_t frames, Rng& rng) {
  Plan plan;
  auto [a, b] = m.crosswalks[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(m.crosswalks.size()) - 1))];
  if (rng.bernoulli(0.5)) std::swap(a, b);
  const Vec2 d = b - a;
  const Vec2 along = d * (1.0 / d.norm());
  const Vec2 side{-along.y, along.x};
  plan.start = {a + side * rng.uniform(-1.5, 1.5) - along * rng.uniform(0.0, 2.0),
                std::atan2(along.y, along.x) + rng.uniform(-0.15, 0.15)};
  const double wait = rng.uniform(0.0, 2.0);
  const double v_walk = rng.uniform(1.0, 1.6);
  plan.speed = speed_profile(
      frames, 0.0, [=](double t, double v) { return t >= wait && v < v_walk ? 1.0 : 0.0; }, 0.0, rng, v_walk);
  return plan;
}

Plan cyclist_plan(const MapLayout& m, std::size_t frames, double noise, Rng& rng) {
  Plan plan;
  const Corridor& lane =
      m.shoulders[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(m.shoulders.size()) - 1))];
  plan.start = lane.at(rng.uniform(-90.0, 40.0));
  plan.curvature = merge_profile(rng.uniform(0.0, 12.0), rng.uniform(15.0, 25.0), rng.uniform(0.9, 1.4));
  plan.speed = speed_profile(frames, rng.uniform(3.5, 6.0), [](double, double) { return 0.0; }, 0.3 * noise, rng, 8.0);
  return plan;
}

// Frames at which track `a` overlaps any accepted track.
std::size_t overlap_frames(const std::vector<AgentState>& a, const std::vector<Agent>& others) {
  std::size_t frames = 0;
  for (std::size_t t = 0; t < a.size(); ++t) {
    const OrientedBox box{a[t].position, a[t].heading, a[t].length, a[t].width};
    const double reach = 0.5 * std::hypot(a[t].length, a[t].width);
    for (const Agent& o : others) {
      const AgentState& b = o.history[t];
      if ((b.position - a[t].position).norm() > reach + 0.5 * std::hypot(b.length, b.width)) continue;
      if (obb_iou(box, {b.position, b.heading, b.length, b.width}) > 0.0) {
        ++frames;
        break;
      }
    }
  }
  return frames;
}

std::vector<Behavior> stratified(const std::map<Behavior, double>& mix, std::size_t total) {
  double sum = 0.0;
  for (const auto& [b, w] : mix) {
    if (w < 0.0) throw ValidationError("behaviour weights must be non-negative");
    sum += w;
  }
  if (sum <= 0.0) throw ValidationError("behaviour mix is empty");
  std::vector<std::pair<double, Behavior>> remainders;
  std::vector<Behavior> out;
  for (const auto& [b, w] : mix) {
    const double exact = w / sum * static_cast<double>(total);
    const auto n = static_cast<std::size_t>(std::floor(exact));
    out.insert(out.end(), n, b);
    remainders.push_back({exact - static_cast<double>(n), b});
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](auto& x, auto& y) { return x.first > y.first; });
  for (std::size_t i = 0; out.size() < total; ++i) out.push_back(remainders[i % remainders.size()].second);
  return out;
}

}  // namespace

std::string_view to_string(Behavior b) {
  switch (b) {
    case Behavior::Straight: return "straight";
    case Behavior::LeftTurn: return "left-turn";
    case Behavior::RightTurn: return "right-turn";
    case Behavior::Stop: return "stop";
    case Behavior::Yield: return "yield";
    case Behavior::CrossingPedestrian: return "crossing-pedestrian";
    case Behavior::CyclistMerge: return "cyclist-merge";
  }
  return "?";
}

Behavior parse_behavior(std::string_view tag) {
  for (Behavior b : kBehaviors) {
    if (to_string(b) == tag) return b;
  }
  throw ValidationError("unknown behaviour template '" + std::string(tag) + "'");
}

AgentType agent_type_of(Behavior b) {
  if (b == Behavior::CrossingPedestrian) return AgentType::Pedestrian;
  if (b == Behavior::CyclistMerge) return AgentType::Cyclist;
  return AgentType::Vehicle;
}

std::map<Behavior, double> SynthConfig::default_mix() {
  return {{Behavior::Straight, 0.30},          {Behavior::LeftTurn, 0.12},     {Behavior::RightTurn, 0.12},
          {Behavior::Stop, 0.10},              {Behavior::Yield, 0.10},        {Behavior::CrossingPedestrian, 0.13},
          {Behavior::CyclistMerge, 0.13}};
}

nlohmann::json SynthConfig::to_json() const {
  nlohmann::json m = nlohmann::json::object();
  for (const auto& [b, w] : mix) m[std::string(to_string(b))] = w;
  return {{"seed", seed},
          {"count", count},
          {"agents_per_scene", agents_per_scene},
          {"frames", frames},
          {"mix", m},
          {"intersection_fraction", intersection_fraction},
          {"speed_noise", speed_noise}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  SynthConfig c;
  c.seed = j.value("seed", c.seed);
  c.count = j.value("count", c.count);
  c.agents_per_scene = j.value("agents_per_scene", c.agents_per_scene);
  c.frames = j.value("frames", c.frames);
  c.intersection_fraction = j.value("intersection_fraction", c.intersection_fraction);
  c.speed_noise = j.value("speed_noise", c.speed_noise);
  if (j.contains("mix")) {
    c.mix.clear();
    for (const auto& [k, v] : j.at("mix").items()) c.mix[parse_behavior(k)] = v.get<double>();
  }
  return c;
}

std::vector<SynthScene> synthesize(const SynthConfig& config) {
  if (config.frames < 2) throw ValidationError("synthetic recordings need at least two frames");
  if (config.agents_per_scene == 0) throw ValidationError("agents_per_scene must be positive");
  Rng rng(config.seed);
  std::vector<Behavior> pool = stratified(config.mix, config.count * config.agents_per_scene);
  std::shuffle(pool.begin(), pool.end(), rng.engine());
  std::vector<Behavior> egos;
  std::vector<Behavior> rest;
  for (Behavior b : pool) {
    (agent_type_of(b) == AgentType::Vehicle && egos.size() < config.count ? egos : rest).push_back(b);
  }
  if (egos.size() < config.count) throw ValidationError("behaviour mix needs vehicle templates for the ego agents");

  std::vector<SynthScene> scenes;
  for (std::size_t i = 0; i < config.count; ++i) {
    Rng srng = rng.derive(i);
    SynthScene scene;
    scene.map = srng.uniform() < config.intersection_fraction ? MapTemplate::Intersection : MapTemplate::StraightRoad;
    const MapLayout layout = scene.map == MapTemplate::Intersection ? intersection() : straight_road(srng);
    Scenario& s = scene.scenario;
    char name[64];
    std::snprintf(name, sizeof(name), "synth-%llu-%05zu", static_cast<unsigned long long>(config.seed), i);
    s.id = name;
    s.meta.source_id = s.id;
    s.map = layout.map;
    s.ego_id = 0;

    for (std::size_t k = 0; k < config.agents_per_scene; ++k) {
      const Behavior b = k == 0 ? egos[i] : rest[i * (config.agents_per_scene - 1) + (k - 1)];
      Agent a;
      a.id = static_cast<std::int64_t>(k);
      a.type = agent_type_of(b);
      const Size size = agent_size(a.type, srng);
      a.length = size.length;
      a.width = size.width;
      // Rejection sampling over whole tracks; if nothing is overlap-free the
      // least-overlapping draw is kept.
      std::vector<AgentState> best;
      std::size_t best_overlap = std::numeric_limits<std::size_t>::max();
      for (int attempt = 0; attempt < 40 && best_overlap > 0; ++attempt) {
        Plan plan;
        if (a.type == AgentType::Pedestrian) {
          plan = pedestrian_plan(layout, config.frames, srng);
        } else if (a.type == AgentType::Cyclist) {
          plan = cyclist_plan(layout, config.frames, config.speed_noise, srng);
        } else {
          plan = vehicle_plan(b, layout, scene.map, config.frames, config.speed_noise, srng);
        }
        auto track = integrate(plan, a, config.frames);
        const std::size_t overlap = overlap_frames(track, s.agents);
        if (overlap < best_overlap) {
          best_overlap = overlap;
          best = std::move(track);
        }
      }
      a.history = std::move(best);
      s.agents.push_back(std::move(a));
      scene.behaviors.push_back({static_cast<std::int64_t>(k), b});
    }

    // Random rigid placement of the whole recording.
    const AgentFrame world{{srng.uniform(-500.0, 500.0), srng.uniform(-500.0, 500.0)}, srng.uniform(-kPi, kPi)};
    for (auto& lane : s.map.lanes) {
      for (auto& p : lane.points) p = world.to_global(p);
    }
    for (auto& a : s.agents) {
      for (auto& st : a.history) st = world.to_global(st);
    }
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

std::vector<Scenario> synthesize_scenarios(const SynthConfig& config) {
  std::vector<Scenario> out;
  for (auto& s : synthesize(config)) out.push_back(std::move(s.scenario));
  return out;
}

}  // namespace dragtraffic
