#include "dragtraffic/service.hpp"

#include <chrono>
#include <cmath>

#include <httplib.h>

#include "dragtraffic/dataio.hpp"
#include "dragtraffic/error.hpp"
#include "dragtraffic/metrics.hpp"

namespace dragtraffic {

using json = nlohmann::json;

namespace {

Vec2 vec_from_json(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 2) throw ValidationError(std::string(what) + " must be [x, y]");
  return {j[0].get<double>(), j[1].get<double>()};
}

constexpr std::pair<Edit::Op, const char*> kOpNames[] = {
    {Edit::Op::MoveAgent, "move_agent"},       {Edit::Op::AddAgent, "add_agent"},
    {Edit::Op::RemoveAgent, "remove_agent"},   {Edit::Op::SetCondition, "set_condition"},
    {Edit::Op::ClearCondition, "clear_condition"},
};

void apply_edit(SessionState& s, const Edit& e) {
  Scenario& sc = s.scenario;
  switch (e.op) {
    case Edit::Op::MoveAgent: {
      AgentState& cur = sc.agent(e.agent_id).current();
      const double speed = e.speed.value_or(cur.speed());
      if (e.heading) cur.heading = wrap_angle(*e.heading);
      cur.position = e.position;
      cur.velocity = Vec2{std::cos(cur.heading), std::sin(cur.heading)} * speed;
      cur.valid = true;
      break;
    }
    case Edit::Op::AddAgent: {
      if (sc.has_agent(e.agent.id)) throw ValidationError("agent " + std::to_string(e.agent.id) + " already exists");
      if (e.agent.history.empty()) throw ValidationError("new agent needs a current state");
      Agent a = e.agent;
      const std::size_t len = sc.agents.empty() ? 1 : sc.agents.front().history.size();
      AgentState st = a.current();
      st.type = a.type;
      st.length = a.length;
      st.width = a.width;
      a.history.assign(len, st);
      for (std::size_t i = 0; i + 1 < len; ++i) a.history[i].valid = false;
      a.future.reset();
      sc.agents.push_back(std::move(a));
      break;
    }
    case Edit::Op::RemoveAgent: {
      sc.agent(e.agent_id);
      if (sc.agents.size() == 1) throw ValidationError("cannot remove the last agent");
      std::erase_if(sc.agents, [&](const Agent& a) { return a.id == e.agent_id; });
      s.conditions.erase(e.agent_id);
      if (sc.ego_id == e.agent_id) sc.ego_id = sc.agents.front().id;
      break;
    }
    case Edit::Op::SetCondition: {
      const Agent& a = sc.agent(e.agent_id);
      ConditionContext c = e.condition;
      c.valid = true;
      if (c.length <= 0.0) c.length = a.length;
      if (c.width <= 0.0) c.width = a.width;
      s.conditions[e.agent_id] = c;
      break;
    }
    case Edit::Op::ClearCondition:
      sc.agent(e.agent_id);
      s.conditions.erase(e.agent_id);
      break;
  }
  sc.validate();
}

}  // namespace

Edit Edit::from_json(const json& j) {
  Edit e;
  const std::string op = j.at("op").get<std::string>();
  bool known = false;
  for (const auto& [value, name] : kOpNames) {
    if (op == name) {
      e.op = value;
      known = true;
    }
  }
  if (!known) throw ValidationError("unknown edit op '" + op + "'");
  e.agent_id = j.value("agent_id", std::int64_t{0});
  switch (e.op) {
    case Op::MoveAgent:
      e.position = vec_from_json(j.at("position"), "position");
      if (j.contains("heading")) e.heading = j.at("heading").get<double>();
      if (j.contains("speed")) e.speed = j.at("speed").get<double>();
      break;
    case Op::AddAgent: {
      const json& a = j.at("agent");
      e.agent.id = a.at("id").get<std::int64_t>();
      e.agent_id = e.agent.id;
      e.agent.type = parse_agent_type(a.at("type").get<std::string>());
      e.agent.length = a.value("length", e.agent.type == AgentType::Vehicle ? 4.5 : e.agent.type == AgentType::Cyclist ? 1.8 : 0.6);
      e.agent.width = a.value("width", e.agent.type == AgentType::Vehicle ? 1.9 : e.agent.type == AgentType::Cyclist ? 0.7 : 0.6);
      AgentState s;
      s.type = e.agent.type;
      s.position = vec_from_json(a.at("position"), "position");
      s.heading = wrap_angle(a.value("heading", 0.0));
      s.velocity = Vec2{std::cos(s.heading), std::sin(s.heading)} * a.value("speed", 0.0);
      s.length = e.agent.length;
      s.width = e.agent.width;
      e.agent.history = {s};
      break;
    }
    case Op::SetCondition:
      e.condition = condition_from_json(j.at("condition"));
      break;
    case Op::RemoveAgent:
    case Op::ClearCondition:
      break;
  }
  return e;
}

json Edit::to_json() const {
  std::string name;
  for (const auto& [value, n] : kOpNames) {
    if (value == op) name = n;
  }
  json j{{"op", name}, {"agent_id", agent_id}};
  if (op == Op::MoveAgent) {
    j["position"] = {position.x, position.y};
    if (heading) j["heading"] = *heading;
    if (speed) j["speed"] = *speed;
  } else if (op == Op::AddAgent) {
    const AgentState& s = agent.current();
    j["agent"] = {{"id", agent.id},
                  {"type", std::string(to_string(agent.type))},
                  {"position", {s.position.x, s.position.y}},
                  {"heading", s.heading},
                  {"speed", s.speed()},
                  {"length", agent.length},
                  {"width", agent.width}};
  } else if (op == Op::SetCondition) {
    j["condition"] = condition_to_json(condition);
  }
  return j;
}

json JobProgress::to_json() const {
  return {{"job", job}, {"done", done}, {"total", total}, {"finished", finished}};
}

json conditions_to_json(const ConditionMap& conditions) {
  json out = json::array();
  for (const auto& [id, c] : conditions) {
    json entry = condition_to_json(c);
    entry["agent_id"] = id;
    out.push_back(std::move(entry));
  }
  return out;
}

ConditionMap conditions_from_json(const json& j) {
  ConditionMap out;
  for (const auto& entry : j) out[entry.at("agent_id").get<std::int64_t>()] = condition_from_json(entry);
  return out;
}

json SessionSnapshot::to_json() const {
  json j{{"id", id},
         {"revision", revision},
         {"scenario", scenario_to_json(state.scenario)},
         {"conditions", conditions_to_json(state.conditions)},
         {"can_undo", can_undo},
         {"can_redo", can_redo}};
  j["rollout"] = rollout ? rollout_to_json(*rollout) : json(nullptr);
  return j;
}

json SessionMetrics::to_json() const {
  json errors = json::object();
  for (const auto& [id, e] : endpoint_error) errors[std::to_string(id)] = e;
  return {{"collision_rate", collision_rate ? json(*collision_rate) : json(nullptr)},
          {"endpoint_error", errors},
          {"tolerance", tolerance}};
}

struct SessionManager::Session {
  std::string id;
  std::mutex mutex;
  std::uint64_t revision = 0;
  SessionState state;
  std::optional<SceneRollout> rollout;
  std::vector<SessionState> undo;
  std::vector<SessionState> redo;

  mutable std::mutex progress_mutex;
  JobProgress progress;

  SessionSnapshot snapshot() const {
    return SessionSnapshot{id, revision, state, rollout, !undo.empty(), !redo.empty()};
  }
  void check_revision(std::uint64_t base) const {
    if (base != revision) {
      throw ConflictError("session '" + id + "' is at revision " + std::to_string(revision) + ", request was based on " +
                          std::to_string(base));
    }
  }
  void set_progress(JobProgress p) {
    std::lock_guard lock(progress_mutex);
    progress = std::move(p);
  }
};

SessionManager::SessionManager(std::shared_ptr<const MixtureOfExperts> experts, double endpoint_tolerance)
    : experts_(std::move(experts)), tolerance_(endpoint_tolerance) {
  if (!experts_) throw ValidationError("session manager needs experts");
}

std::shared_ptr<SessionManager::Session> SessionManager::find(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFoundError("no session '" + id + "'");
  return it->second;
}

SessionSnapshot SessionManager::create(Scenario scenario) {
  scenario.validate();
  auto s = std::make_shared<Session>();
  s->state.scenario = std::move(scenario);
  std::lock_guard lock(mutex_);
  s->id = "s" + std::to_string(next_id_++);
  sessions_[s->id] = s;
  return s->snapshot();
}

SessionSnapshot SessionManager::get(const std::string& id) const {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  return s->snapshot();
}

std::vector<std::string> SessionManager::list() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [id, _] : sessions_) out.push_back(id);
  return out;
}

void SessionManager::remove(const std::string& id) {
  std::lock_guard lock(mutex_);
  if (sessions_.erase(id) == 0) throw NotFoundError("no session '" + id + "'");
}

SessionSnapshot SessionManager::apply(const std::string& id, std::uint64_t base_revision, const Edit& edit) {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  s->check_revision(base_revision);
  SessionState next = s->state;
  apply_edit(next, edit);
  s->undo.push_back(std::move(s->state));
  s->redo.clear();
  s->state = std::move(next);
  s->rollout.reset();
  ++s->revision;
  return s->snapshot();
}

SessionSnapshot SessionManager::undo(const std::string& id, std::uint64_t base_revision) {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  s->check_revision(base_revision);
  if (s->undo.empty()) throw ConflictError("nothing to undo");
  s->redo.push_back(std::move(s->state));
  s->state = std::move(s->undo.back());
  s->undo.pop_back();
  s->rollout.reset();
  ++s->revision;
  return s->snapshot();
}

SessionSnapshot SessionManager::redo(const std::string& id, std::uint64_t base_revision) {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  s->check_revision(base_revision);
  if (s->redo.empty()) throw ConflictError("nothing to redo");
  s->undo.push_back(std::move(s->state));
  s->state = std::move(s->redo.back());
  s->redo.pop_back();
  s->rollout.reset();
  ++s->revision;
  return s->snapshot();
}

SceneRollout SessionManager::generate(const std::string& id, std::uint64_t seed) {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  GenerateOptions options;
  options.on_agent = [&](std::size_t done, std::size_t total) { s->set_progress({"generate", done, total, false}); };
  s->set_progress({"generate", 0, 0, false});
  try {
    s->rollout = experts_->generate(s->state.scenario, s->state.conditions, seed, options);
  } catch (...) {
    s->set_progress({"generate", 0, 0, true});
    throw;
  }
  const std::size_t n = s->rollout->agents.size();
  s->set_progress({"generate", n, n, true});
  return *s->rollout;
}

SceneRollout SessionManager::rollout(const std::string& id, std::size_t horizon_steps, std::size_t replan_interval,
                                     std::uint64_t seed) {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  const std::size_t calls = replan_interval ? horizon_steps / replan_interval : 0;
  std::size_t call = 0;
  GenerateOptions options;
  options.on_agent = [&](std::size_t done, std::size_t total) {
    s->set_progress({"rollout", call * total + done, calls * total, false});
    if (done == total) ++call;
  };
  s->set_progress({"rollout", 0, 0, false});
  try {
    s->rollout =
        experts_->rollout_closed_loop(s->state.scenario, s->state.conditions, horizon_steps, replan_interval, seed, options);
  } catch (...) {
    s->set_progress({"rollout", 0, 0, true});
    throw;
  }
  const std::size_t n = s->rollout->agents.size() * calls;
  s->set_progress({"rollout", n, n, true});
  return *s->rollout;
}

SessionMetrics SessionManager::metrics(const std::string& id) const {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  SessionMetrics m;
  m.tolerance = tolerance_;
  if (!s->rollout) return m;
  m.collision_rate = scenario_collision_rate(std::span(&*s->rollout, 1));
  for (const RolloutAgent& a : s->rollout->agents) {
    const auto it = s->state.conditions.find(a.id);
    if (it == s->state.conditions.end() || a.trajectory.states.empty()) continue;
    const std::size_t t = std::min(a.trajectory.size(), kFutureSteps) - 1;
    m.endpoint_error[a.id] = (a.trajectory.states[t].position - it->second.target_position).norm();
  }
  return m;
}

JobProgress SessionManager::progress(const std::string& id) const {
  auto s = find(id);
  std::lock_guard lock(s->progress_mutex);
  return s->progress;
}

json SessionManager::export_session(const std::string& id) const {
  const SessionSnapshot snap = get(id);
  json j{{"scenario", scenario_to_json(snap.state.scenario)}, {"conditions", conditions_to_json(snap.state.conditions)}};
  j["rollout"] = snap.rollout ? rollout_to_json(*snap.rollout) : json(nullptr);
  return j;
}

// ---------------------------------------------------------------------------
// HTTP

namespace {

int status_for(const std::exception_ptr& ep, std::string& kind, std::string& message) {
  try {
    std::rethrow_exception(ep);
  } catch (const NotFoundError& e) {
    kind = "not_found";
    message = e.what();
    return 404;
  } catch (const ConflictError& e) {
    kind = "conflict";
    message = e.what();
    return 409;
  } catch (const Error& e) {
    kind = "invalid";
    message = e.what();
    return 400;
  } catch (const json::exception& e) {
    kind = "invalid";
    message = e.what();
    return 400;
  } catch (const std::exception& e) {
    kind = "internal";
    message = e.what();
    return 500;
  }
}

json body_json(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("request body is not JSON: ") + e.what());
  }
}

std::uint64_t base_revision(const json& body) {
  if (!body.contains("base_revision")) throw ValidationError("base_revision is required");
  return body.at("base_revision").get<std::uint64_t>();
}

}  // namespace

struct ApiServer::Impl {
  SessionManager& sessions;
  httplib::Server server;
  std::thread thread;

  explicit Impl(SessionManager& s) : sessions(s) { routes(); }

  using Handler = std::function<json(const httplib::Request&, int&)>;

  httplib::Server::Handler wrap(Handler h) {
    return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
      int status = 200;
      json out;
      try {
        out = h(req, status);
      } catch (...) {
        std::string kind;
        std::string message;
        status = status_for(std::current_exception(), kind, message);
        out = {{"error", kind}, {"message", message}};
      }
      res.status = status;
      res.set_content(out.dump(), "application/json");
    };
  }

  void routes() {
    server.Get("/health", wrap([](const httplib::Request&, int&) { return json{{"status", "ok"}}; }));
    server.Get("/experts", wrap([this](const httplib::Request&, int&) {
      json out = json::array();
      for (AgentType t : sessions.experts().types()) {
        out.push_back({{"agent_type", std::string(to_string(t))}, {"expert", sessions.experts().route(t)}});
      }
      return out;
    }));
    server.Get("/sessions", wrap([this](const httplib::Request&, int&) { return json(sessions.list()); }));
    server.Post("/sessions", wrap([this](const httplib::Request& req, int& status) {
      const json body = body_json(req);
      status = 201;
      return sessions.create(scenario_from_json(body.at("scenario"))).to_json();
    }));
    server.Get(R"(/sessions/([^/]+))", wrap([this](const httplib::Request& req, int&) {
      return sessions.get(req.matches[1]).to_json();
    }));
    server.Delete(R"(/sessions/([^/]+))", wrap([this](const httplib::Request& req, int&) {
      sessions.remove(req.matches[1]);
      return json{{"deleted", std::string(req.matches[1])}};
    }));
    server.Post(R"(/sessions/([^/]+)/edits)", wrap([this](const httplib::Request& req, int&) {
      const json body = body_json(req);
      return sessions.apply(req.matches[1], base_revision(body), Edit::from_json(body.at("edit"))).to_json();
    }));
    server.Put(R"(/sessions/([^/]+)/conditions/(-?\d+))", wrap([this](const httplib::Request& req, int&) {
      const json body = body_json(req);
      Edit e;
      e.op = Edit::Op::SetCondition;
      e.agent_id = std::stoll(req.matches[2]);
      e.condition = condition_from_json(body.at("condition"));
      return sessions.apply(req.matches[1], base_revision(body), e).to_json();
    }));
    server.Delete(R"(/sessions/([^/]+)/conditions/(-?\d+))", wrap([this](const httplib::Request& req, int&) {
      if (!req.has_param("base_revision")) throw ValidationError("base_revision is required");
      Edit e;
      e.op = Edit::Op::ClearCondition;
      e.agent_id = std::stoll(req.matches[2]);
      return sessions.apply(req.matches[1], std::stoull(req.get_param_value("base_revision")), e).to_json();
    }));
    server.Post(R"(/sessions/([^/]+)/undo)", wrap([this](const httplib::Request& req, int&) {
      return sessions.undo(req.matches[1], base_revision(body_json(req))).to_json();
    }));
    server.Post(R"(/sessions/([^/]+)/redo)", wrap([this](const httplib::Request& req, int&) {
      return sessions.redo(req.matches[1], base_revision(body_json(req))).to_json();
    }));
    server.Post(R"(/sessions/([^/]+)/generate)", wrap([this](const httplib::Request& req, int&) {
      const json body = body_json(req);
      return rollout_to_json(sessions.generate(req.matches[1], body.value("seed", std::uint64_t{0})));
    }));
    server.Post(R"(/sessions/([^/]+)/rollout)", wrap([this](const httplib::Request& req, int&) {
      const json body = body_json(req);
      return rollout_to_json(sessions.rollout(req.matches[1], body.value("horizon_steps", std::size_t{180}),
                                              body.value("replan_interval", std::size_t{30}),
                                              body.value("seed", std::uint64_t{0})));
    }));
    server.Get(R"(/sessions/([^/]+)/metrics)", wrap([this](const httplib::Request& req, int&) {
      return sessions.metrics(req.matches[1]).to_json();
    }));
    server.Get(R"(/sessions/([^/]+)/export)", wrap([this](const httplib::Request& req, int&) {
      return sessions.export_session(req.matches[1]);
    }));
    server.Get(R"(/sessions/([^/]+)/progress)", wrap([this](const httplib::Request& req, int&) {
      return sessions.progress(req.matches[1]).to_json();
    }));
    // Server-sent events: one "progress" event per change until the running job
    // finishes. `wait_ms` keeps an idle stream open for a job to start.
    server.Get(R"(/sessions/([^/]+)/events)", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      try {
        sessions.progress(id);
      } catch (const NotFoundError& e) {
        res.status = 404;
        res.set_content(json{{"error", "not_found"}, {"message", e.what()}}.dump(), "application/json");
        return;
      }
      const long wait_ms = req.has_param("wait_ms") ? std::stol(req.get_param_value("wait_ms")) : 0;
      const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(wait_ms);
      res.set_chunked_content_provider(
          "text/event-stream", [this, id, deadline, last = std::string()](std::size_t, httplib::DataSink& sink) mutable {
            for (;;) {
              JobProgress p;
              try {
                p = sessions.progress(id);
              } catch (const NotFoundError&) {
                sink.done();
                return true;
              }
              const std::string data = p.to_json().dump();
              if (data != last) {
                const std::string event = "event: progress\ndata: " + data + "\n\n";
                if (!sink.write(event.data(), event.size())) return false;
                last = data;
              }
              if (p.finished && std::chrono::steady_clock::now() >= deadline) {
                sink.done();
                return true;
              }
              std::this_thread::sleep_for(std::chrono::milliseconds(20));
            }
          });
    });
  }
};

ApiServer::ApiServer(SessionManager& sessions) : impl_(std::make_unique<Impl>(sessions)) {}

ApiServer::~ApiServer() { stop(); }

int ApiServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw Error("cannot bind " + host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    throw Error("cannot bind " + host + ":" + std::to_string(port));
  }
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void ApiServer::listen(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
}

void ApiServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace dragtraffic
