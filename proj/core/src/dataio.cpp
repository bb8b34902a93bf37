#include "dragtraffic/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "dragtraffic/error.hpp"
#include "dragtraffic/rng.hpp"

namespace dragtraffic {

using nlohmann::json;

namespace {

class RecordReader {
 public:
  RecordReader(std::string record, std::size_t line) : record_(std::move(record)), line_(line) {}

  void set_agent(std::optional<std::int64_t> agent) { agent_ = agent; }

  const json& field(const json& j, const char* key) const {
    if (!j.is_object() || !j.contains(key)) fail(std::string("missing field '") + key + "'");
    return j.at(key);
  }

  double number(const json& j, const char* key) const {
    const json& v = field(j, key);
    if (!v.is_number()) fail(std::string("field '") + key + "' must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) fail(std::string("field '") + key + "' must be finite");
    return d;
  }

  std::int64_t integer(const json& j, const char* key) const {
    const json& v = field(j, key);
    if (!v.is_number_integer()) fail(std::string("field '") + key + "' must be an integer");
    return v.get<std::int64_t>();
  }

  const json& array(const json& j, const char* key) const {
    const json& v = field(j, key);
    if (!v.is_array()) fail(std::string("field '") + key + "' must be an array");
    return v;
  }

  Vec2 point(const json& p, const char* what) const {
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
      fail(std::string(what) + " entries must be [x, y]");
    }
    return {p[0].get<double>(), p[1].get<double>()};
  }

  [[noreturn]] void fail(const std::string& msg) const {
    std::string where = "record '" + record_ + "'";
    if (agent_) where += " agent " + std::to_string(*agent_);
    throw SchemaError(where + ": " + msg, line_);
  }

 private:
  std::string record_;
  std::size_t line_;
  std::optional<std::int64_t> agent_;
};

json states_to_json(const std::vector<AgentState>& states) {
  json out = json::array();
  for (const auto& s : states) {
    out.push_back({{"x", s.position.x},
                   {"y", s.position.y},
                   {"vx", s.velocity.x},
                   {"vy", s.velocity.y},
                   {"heading", s.heading},
                   {"valid", s.valid}});
  }
  return out;
}

std::vector<AgentState> states_from_json(const RecordReader& r, const json& arr, const Agent& agent) {
  std::vector<AgentState> out;
  for (const auto& js : arr) {
    AgentState s;
    s.type = agent.type;
    s.length = agent.length;
    s.width = agent.width;
    s.position = {r.number(js, "x"), r.number(js, "y")};
    s.velocity = {r.number(js, "vx"), r.number(js, "vy")};
    s.heading = wrap_angle(r.number(js, "heading"));
    const json& valid = r.field(js, "valid");
    if (!valid.is_boolean()) r.fail("field 'valid' must be a boolean");
    s.valid = valid.get<bool>();
    out.push_back(s);
  }
  return out;
}

AgentState state_at(const Agent& a, std::size_t frame) {
  if (frame < a.history.size()) return a.history[frame];
  AgentState s = a.history.back();
  s.valid = false;
  return s;
}

std::string window_id(const std::string& source, int window, AgentType type) {
  return source + "/w" + std::to_string(window) + "/" + std::string(to_string(type));
}

std::size_t valid_frames(const Agent& a) {
  std::size_t n = 0;
  for (const auto& s : a.history) n += s.valid;
  if (a.future) {
    for (const auto& s : a.future->states) n += s.valid;
  }
  return n;
}

bool endpoint_valid(const Agent& a, std::size_t steps) {
  return a.future && a.future->states.size() == steps && a.future->states.back().valid;
}

const Agent* pick_center(const Scenario& window, AgentType type) {
  if (window.has_agent(window.ego_id)) {
    const Agent& ego = window.agent(window.ego_id);
    if (ego.type == type && ego.current().valid) return &ego;
  }
  const Agent* best = nullptr;
  for (const auto& a : window.agents) {
    if (a.type == type && a.current().valid && (!best || a.id < best->id)) best = &a;
  }
  return best;
}

// Applies the per-centre filters and emits the cropped record.
void emit(const Scenario& window, const Agent* center, AgentType type, const std::string& source, int w,
          int raw_count, const PreprocessOptions& opt, PreprocessResult& out) {
  auto drop = [&](const char* reason) { out.drops.push_back({source, w, type, reason}); };
  if (!center) return drop("no_center_agent");
  if (valid_frames(*center) < opt.min_valid_frames) return drop("min_frames");
  if (!endpoint_valid(*center, opt.window_steps)) return drop("invalid_endpoint");
  const AgentFrame frame{center->current().position, center->current().heading};
  Scenario rec = crop_scenario(window, frame, center->id, opt.crop_half);
  rec.id = window_id(source, w, type);
  rec.meta = ScenarioMeta{source, w, raw_count, type};
  out.datasets[type].push_back(std::move(rec));
}

}  // namespace

json scenario_to_json(const Scenario& s) {
  json lanes = json::array();
  for (const auto& lane : s.map.lanes) {
    json pts = json::array();
    for (const auto& p : lane.points) pts.push_back({p.x, p.y});
    json attrs = json::array();
    for (const auto& a : lane.attributes) attrs.push_back(a);
    lanes.push_back({{"id", lane.id}, {"points", std::move(pts)}, {"attributes", std::move(attrs)}});
  }
  json agents = json::array();
  for (const auto& a : s.agents) {
    json ja = {{"id", a.id},
               {"type", std::string(to_string(a.type))},
               {"length", a.length},
               {"width", a.width},
               {"history", states_to_json(a.history)}};
    if (a.future) ja["future"] = states_to_json(a.future->states);
    agents.push_back(std::move(ja));
  }
  json meta = {{"source_id", s.meta.source_id}, {"window", s.meta.window}, {"raw_agent_count", s.meta.raw_agent_count}};
  if (s.meta.center_type) meta["center_type"] = std::string(to_string(*s.meta.center_type));
  return {{"schema", kScenarioSchema}, {"id", s.id},   {"dt", s.dt},
          {"ego_id", s.ego_id},        {"meta", meta}, {"map", {{"lanes", std::move(lanes)}}},
          {"agents", std::move(agents)}};
}

Scenario scenario_from_json(const json& j, std::size_t line) {
  std::string id = j.is_object() && j.contains("id") && j.at("id").is_string() ? j.at("id").get<std::string>() : "?";
  RecordReader r(id, line);
  if (!j.is_object()) r.fail("record must be a JSON object");
  const json& schema = r.field(j, "schema");
  if (!schema.is_string() || schema.get<std::string>() != kScenarioSchema) {
    r.fail(std::string("unsupported schema, expected '") + kScenarioSchema + "'");
  }
  if (!r.field(j, "id").is_string()) r.fail("field 'id' must be a string");
  Scenario s;
  s.id = id;
  s.dt = j.contains("dt") ? r.number(j, "dt") : kDt;
  s.ego_id = r.integer(j, "ego_id");
  if (j.contains("meta")) {
    const json& m = j.at("meta");
    s.meta.source_id = m.value("source_id", "");
    s.meta.window = m.value("window", -1);
    s.meta.raw_agent_count = m.value("raw_agent_count", 0);
    if (m.contains("center_type")) {
      try {
        s.meta.center_type = parse_agent_type(m.at("center_type").get<std::string>());
      } catch (const std::exception& e) {
        r.fail(std::string("meta.center_type: ") + e.what());
      }
    }
  }
  const json& map = r.field(j, "map");
  for (const auto& jl : r.array(map, "lanes")) {
    Lane lane;
    lane.id = r.integer(jl, "id");
    for (const auto& p : r.array(jl, "points")) lane.points.push_back(r.point(p, "lane points"));
    for (const auto& a : r.array(jl, "attributes")) {
      if (!a.is_array() || a.size() != kLaneAttributes) {
        r.fail("lane " + std::to_string(lane.id) + " attributes must have " + std::to_string(kLaneAttributes) +
               " entries per segment");
      }
      SegmentAttributes attr{};
      for (std::size_t k = 0; k < kLaneAttributes; ++k) attr[k] = a[k].get<double>();
      lane.attributes.push_back(attr);
    }
    s.map.lanes.push_back(std::move(lane));
  }
  for (const auto& ja : r.array(j, "agents")) {
    Agent a;
    a.id = r.integer(ja, "id");
    r.set_agent(a.id);
    const json& type = r.field(ja, "type");
    if (!type.is_string()) r.fail("field 'type' must be a string");
    try {
      a.type = parse_agent_type(type.get<std::string>());
    } catch (const ValidationError& e) {
      r.fail(e.what());
    }
    a.length = r.number(ja, "length");
    a.width = r.number(ja, "width");
    a.history = states_from_json(r, r.array(ja, "history"), a);
    if (a.history.empty()) r.fail("history must hold at least the current state");
    if (ja.contains("future")) a.future = Trajectory{states_from_json(r, r.array(ja, "future"), a), s.dt};
    r.set_agent(std::nullopt);
    s.agents.push_back(std::move(a));
  }
  try {
    s.validate();
  } catch (const ValidationError& e) {
    r.fail(e.what());
  }
  return s;
}

std::string canonical_line(const Scenario& scenario) { return scenario_to_json(scenario).dump(); }

std::vector<Scenario> load_scenarios(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open scenario file '" + path.string() + "'");
  std::vector<Scenario> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw SchemaError(std::string("malformed JSON: ") + e.what(), line);
    }
    out.push_back(scenario_from_json(j, line));
  }
  return out;
}

void save_scenarios(const std::filesystem::path& path, std::span<const Scenario> scenarios) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write scenario file '" + path.string() + "'");
  for (const auto& s : scenarios) out << canonical_line(s) << '\n';
}

std::size_t PreprocessResult::total_records() const {
  std::size_t n = 0;
  for (const auto& [type, records] : datasets) n += records.size();
  return n;
}

PreprocessResult preprocess(std::span<const Scenario> raw, const PreprocessOptions& opt) {
  PreprocessResult out;
  for (AgentType t : kAgentTypes) out.datasets[t];
  for (const auto& s : raw) {
    const std::string source = source_key(s);
    if (s.meta.window >= 0) {
      if (static_cast<std::size_t>(s.meta.raw_agent_count) < opt.min_agents) {
        out.drops.push_back({source, s.meta.window, std::nullopt, "min_agents"});
        continue;
      }
      const AgentType type = s.meta.center_type.value_or(s.agent(s.ego_id).type);
      const Agent* center = s.has_agent(s.ego_id) && s.agent(s.ego_id).type == type ? &s.agent(s.ego_id) : nullptr;
      emit(s, center, type, source, s.meta.window, s.meta.raw_agent_count, opt, out);
      continue;
    }
    std::size_t frames = 0;
    for (const auto& a : s.agents) frames = std::max(frames, a.history.size());
    const std::size_t windows = frames == 0 ? 0 : (frames - 1) / opt.window_steps;
    for (std::size_t w = 0; w < windows; ++w) {
      const std::size_t start = w * opt.window_steps;
      Scenario window;
      window.id = s.id;
      window.dt = s.dt;
      window.map = s.map;
      window.ego_id = s.ego_id;
      for (const auto& a : s.agents) {
        Agent wa = a;
        wa.history = {state_at(a, start)};
        Trajectory future{{}, s.dt};
        for (std::size_t t = 1; t <= opt.window_steps; ++t) future.states.push_back(state_at(a, start + t));
        wa.future = std::move(future);
        if (valid_frames(wa) > 0) window.agents.push_back(std::move(wa));
      }
      const int raw_count = static_cast<int>(window.agents.size());
      if (window.agents.size() < opt.min_agents) {
        out.drops.push_back({source, static_cast<int>(w), std::nullopt, "min_agents"});
        continue;
      }
      for (AgentType t : kAgentTypes) {
        emit(window, pick_center(window, t), t, source, static_cast<int>(w), raw_count, opt, out);
      }
    }
  }
  return out;
}

json drop_to_json(const DropRecord& d) {
  json j = {{"source_id", d.source_id}, {"window", d.window}, {"reason", d.reason}};
  if (d.center_type) j["center_type"] = std::string(to_string(*d.center_type));
  return j;
}

std::string source_key(const Scenario& s) { return s.meta.source_id.empty() ? s.id : s.meta.source_id; }

DatasetSplit split_dataset(std::span<const Scenario> records, const SplitRatios& ratios, std::uint64_t seed) {
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw ValidationError("split ratios must be non-negative and sum to 1");
  }
  std::set<std::string> unique;
  for (const auto& r : records) unique.insert(source_key(r));
  std::vector<std::string> ids(unique.begin(), unique.end());
  Rng rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng.engine());
  const auto n = static_cast<double>(ids.size());
  const auto n_train = static_cast<std::size_t>(std::llround(ratios.train * n));
  const auto n_val = std::min(ids.size() - n_train, static_cast<std::size_t>(std::llround(ratios.val * n)));
  std::map<std::string, int> bucket;
  for (std::size_t i = 0; i < ids.size(); ++i) bucket[ids[i]] = i < n_train ? 0 : (i < n_train + n_val ? 1 : 2);
  DatasetSplit split;
  for (const auto& r : records) {
    switch (bucket.at(source_key(r))) {
      case 0: split.train.push_back(r); break;
      case 1: split.val.push_back(r); break;
      default: split.test.push_back(r); break;
    }
  }
  return split;
}

void check_disjoint(std::span<const Scenario> a, std::span<const Scenario> b, const std::string& what) {
  std::set<std::string> ids;
  for (const auto& s : a) ids.insert(source_key(s));
  for (const auto& s : b) {
    if (ids.count(source_key(s))) throw ValidationError(what + ": source id '" + source_key(s) + "' appears in both");
  }
}

}  // namespace dragtraffic
