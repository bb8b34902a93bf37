#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "dragtraffic/moe.hpp"

namespace dragtraffic {

/// Editable state of one session.
struct SessionState {
  Scenario scenario;
  ConditionMap conditions;
  friend bool operator==(const SessionState&, const SessionState&) = default;
};

/// One scene edit. `op` selects the fields that are read.
struct Edit {
  enum class Op { MoveAgent, AddAgent, RemoveAgent, SetCondition, ClearCondition };
  Op op = Op::MoveAgent;
  std::int64_t agent_id = 0;
  Vec2 position;
  std::optional<double> heading;
  std::optional<double> speed;  ///< along the heading
  Agent agent;                  ///< AddAgent
  ConditionContext condition;   ///< SetCondition

  /// {"op": "move_agent" | "add_agent" | "remove_agent" | "set_condition" | "clear_condition", ...}
  static Edit from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct JobProgress {
  std::string job;  ///< "generate", "rollout" or "" when idle
  std::size_t done = 0;
  std::size_t total = 0;
  bool finished = true;
  nlohmann::json to_json() const;
};

struct SessionSnapshot {
  std::string id;
  std::uint64_t revision = 0;
  SessionState state;
  std::optional<SceneRollout> rollout;
  bool can_undo = false;
  bool can_redo = false;
  nlohmann::json to_json() const;
};

/// Per-agent endpoint distance to its condition target in the last rollout.
struct SessionMetrics {
  std::optional<double> collision_rate;  ///< percent, last rollout
  std::map<std::int64_t, double> endpoint_error;
  double tolerance = 0.0;
  nlohmann::json to_json() const;
};

/// Owns every editing session. Each mutation names the revision it was based
/// on; a stale revision raises ConflictError and changes nothing. Sessions are
/// independent: operations on one never touch another.
class SessionManager {
 public:
  explicit SessionManager(std::shared_ptr<const MixtureOfExperts> experts, double endpoint_tolerance = 5.0);

  SessionSnapshot create(Scenario scenario);
  SessionSnapshot get(const std::string& id) const;
  std::vector<std::string> list() const;
  void remove(const std::string& id);

  SessionSnapshot apply(const std::string& id, std::uint64_t base_revision, const Edit& edit);
  SessionSnapshot undo(const std::string& id, std::uint64_t base_revision);
  SessionSnapshot redo(const std::string& id, std::uint64_t base_revision);

  SceneRollout generate(const std::string& id, std::uint64_t seed);
  SceneRollout rollout(const std::string& id, std::size_t horizon_steps, std::size_t replan_interval,
                       std::uint64_t seed);
  SessionMetrics metrics(const std::string& id) const;
  JobProgress progress(const std::string& id) const;

  /// {"scenario": ..., "conditions": [...], "rollout": ...}
  nlohmann::json export_session(const std::string& id) const;
  const MixtureOfExperts& experts() const { return *experts_; }
  double endpoint_tolerance() const { return tolerance_; }

 private:
  struct Session;
  std::shared_ptr<Session> find(const std::string& id) const;

  std::shared_ptr<const MixtureOfExperts> experts_;
  double tolerance_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t next_id_ = 1;
};

/// JSON-over-HTTP front end for a SessionManager, including a server-sent
/// events stream of job progress.
class ApiServer {
 public:
  explicit ApiServer(SessionManager& sessions);
  ~ApiServer();
  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  /// Binds and serves on a background thread; returns the bound port
  /// (port 0 picks a free one). Throws Error when binding fails.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  /// Serves on the calling thread until stop().
  void listen(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

nlohmann::json conditions_to_json(const ConditionMap& conditions);
ConditionMap conditions_from_json(const nlohmann::json& j);

}  // namespace dragtraffic
