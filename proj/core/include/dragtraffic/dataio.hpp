#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dragtraffic/scene.hpp"

namespace dragtraffic {

inline constexpr const char* kScenarioSchema = "dragtraffic.scenario/1";

/// One scenario record. Throws SchemaError naming the record, agent and field;
/// `line` is used in the message when non-zero.
Scenario scenario_from_json(const nlohmann::json& j, std::size_t line = 0);
nlohmann::json scenario_to_json(const Scenario& scenario);

/// Newline-delimited scenario records. Blank lines are skipped; an empty file
/// yields no scenarios.
std::vector<Scenario> load_scenarios(const std::filesystem::path& path);
void save_scenarios(const std::filesystem::path& path, std::span<const Scenario> scenarios);
/// Canonical text of one record (sorted keys, shortest round-trip numbers).
std::string canonical_line(const Scenario& scenario);

struct PreprocessOptions {
  std::size_t window_steps = kFutureSteps;  ///< future steps per window
  std::size_t min_agents = kMaxAgents;
  std::size_t min_valid_frames = 30;
  double crop_half = kCropHalfExtent;
};

struct DropRecord {
  std::string source_id;
  int window = 0;
  std::optional<AgentType> center_type;  ///< empty when the whole window was dropped
  std::string reason;                    ///< min_agents, no_center_agent, min_frames, invalid_endpoint
  friend bool operator==(const DropRecord&, const DropRecord&) = default;
};

struct PreprocessResult {
  std::map<AgentType, std::vector<Scenario>> datasets;
  std::vector<DropRecord> drops;
  std::size_t total_records() const;
};

/// Raw recordings (meta.window < 0, every agent's history spanning the whole
/// recording) are cut into non-overlapping windows of window_steps + 1 frames.
/// Each window yields at most one record per agent type, centred on the ego
/// for its own type and otherwise on the lowest-id agent of that type that is
/// valid at the window's first frame. Records already produced by preprocess
/// are re-checked and passed through unchanged.
PreprocessResult preprocess(std::span<const Scenario> raw, const PreprocessOptions& options = {});

/// Human-readable counterpart of the drop log, one JSON object per drop.
nlohmann::json drop_to_json(const DropRecord& d);

/// The id that keeps windows of one recording together.
std::string source_key(const Scenario& s);

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct DatasetSplit {
  std::vector<Scenario> train;
  std::vector<Scenario> val;
  std::vector<Scenario> test;
};

/// Shuffles the distinct source ids with `seed` and assigns them to splits in
/// the given ratios. Throws ValidationError when the ratios do not sum to 1.
DatasetSplit split_dataset(std::span<const Scenario> records, const SplitRatios& ratios, std::uint64_t seed);

/// Throws ValidationError naming the first shared source id.
void check_disjoint(std::span<const Scenario> a, std::span<const Scenario> b, const std::string& what);

}  // namespace dragtraffic
