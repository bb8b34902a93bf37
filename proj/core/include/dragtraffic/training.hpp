#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dragtraffic/metrics.hpp"
#include "dragtraffic/model.hpp"

namespace dragtraffic {

enum class Stage { DenoiserPretrain, InitializerFinetune, BaselineRegression };

std::string_view to_string(Stage stage);
/// Accepts the stage names as well as "1", "2" and "baseline".
Stage parse_stage(std::string_view tag);
std::size_t default_epochs(Stage stage);

struct TrainConfig {
  Stage stage = Stage::DenoiserPretrain;
  std::size_t epochs = 0;  ///< 0 selects the stage default (100 / 40 / 150)
  std::size_t batch_size = 64;
  double lr_start = 3e-4;
  double lr_end = 3e-5;
  std::uint64_t seed = 0;
  double condition_dropout = 0.5;  ///< probability of training a sample unconditioned

  std::size_t resolved_epochs() const { return epochs ? epochs : default_epochs(stage); }
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// One centre agent's training sample in its own frame.
struct TrainingExample {
  std::string id;
  std::string source_id;
  AgentInput input;               ///< condition row filled from the ground-truth endpoint
  std::vector<double> future;     ///< steps*2 positions, metres; invalid steps hold the last valid value
  std::vector<std::uint8_t> valid;  ///< per step
};

/// Builds one example per record around its ego agent. Throws ValidationError
/// when a record has no ground-truth future.
std::vector<TrainingExample> make_examples(std::span<const Scenario> records, const ModelConfig& config);

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double mse = 0.0;  ///< stage 2 / baseline: closest-mode term
  double nll = 0.0;  ///< stage 2 / baseline: score term
  double lr = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::int64_t steps = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Minimises the noise-estimation loss; updates the context encoder and the
/// noise estimator. Throws ValidationError on an empty dataset.
TrainResult train_stage1(ExpertModel& model, std::span<const TrainingExample> data, const TrainConfig& config,
                         const EpochCallback& on_epoch = {});
/// Closest-mode MSE + score NLL on refined trajectories; the denoiser groups
/// are frozen for the whole stage.
TrainResult train_stage2(ExpertModel& model, std::span<const TrainingExample> data, const TrainConfig& config,
                         const EpochCallback& on_epoch = {});
/// Same losses on the raw initializer output, without refinement.
TrainResult train_baseline(ExpertModel& model, std::span<const TrainingExample> data, const TrainConfig& config,
                           const EpochCallback& on_epoch = {});
TrainResult train(ExpertModel& model, std::span<const TrainingExample> data, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// Mean stage-1 loss over `data` with a fixed seed (no parameter update).
double noise_estimation_loss(const ExpertModel& model, std::span<const TrainingExample> data, std::uint64_t seed);

/// Per-sample losses of one stage-2 style batch (used for the decomposition
/// test): returns {mse, nll} means over the batch.
std::pair<double, double> regression_losses(const ExpertModel& model, std::span<const TrainingExample> data,
                                            bool refine, std::uint64_t seed);

enum class ConditionsPolicy { None, FromGtEndpoint };
std::string_view to_string(ConditionsPolicy p);
ConditionsPolicy parse_conditions_policy(std::string_view tag);

struct EvalOptions {
  ConditionsPolicy conditions = ConditionsPolicy::None;
  std::uint64_t seed = 0;
  bool refine = true;
  KinematicAverage average = KinematicAverage::Trajectory;
  std::size_t batch_size = 64;
};

struct TypeMetrics {
  std::size_t count = 0;
  double min_ade = 0.0;
  double min_fde = 0.0;
  double heading_error = 0.0;
  double speed_error = 0.0;
  double endpoint_error = 0.0;  ///< highest-score mode at the final step, metres
  double initial_min_ade = 0.0;  ///< before refinement
  double initial_min_fde = 0.0;
  std::size_t degenerate = 0;   ///< samples whose heading comparison was skipped
  nlohmann::json to_json() const;
};

struct EvalReport {
  std::string model;
  ConditionsPolicy conditions = ConditionsPolicy::None;
  std::map<AgentType, TypeMetrics> per_type;

  /// {"rows": [{"dataset", "model", "metric", "value"}...], ...}
  nlohmann::json to_json() const;
};

/// Evaluates one expert on held-out records. Throws ValidationError for an
/// empty set or when a record's source id is listed in the model's training
/// sources.
EvalReport evaluate(const ExpertModel& model, std::span<const Scenario> records, const EvalOptions& options);

/// Constant-velocity extrapolation of the current state, scored like a
/// single-mode prediction.
EvalReport evaluate_constant_velocity(std::span<const Scenario> records,
                                      KinematicAverage average = KinematicAverage::Trajectory);

/// Concatenates the rows of several reports into one listing.
nlohmann::json merge_reports(std::span<const EvalReport> reports);

}  // namespace dragtraffic
