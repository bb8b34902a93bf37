#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dragtraffic/nn/graph.hpp"
#include "dragtraffic/nn/layers.hpp"
#include "dragtraffic/rng.hpp"

namespace dragtraffic {

/// Variance schedule with 0-based step index gamma: alpha_bars[gamma] is the
/// product of alphas[0..gamma], and q_sample(tau0, gamma) produces the sample
/// one level above, tau^{gamma+1}.
struct DiffusionSchedule {
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;
  /// Reverse steps used by refinement, highest first (gamma = depth-1 ... 0).
  std::vector<std::size_t> refine_steps;

  /// Linear betas from beta_start to beta_end across total_steps.
  static DiffusionSchedule linear(std::size_t total_steps = 100, double beta_start = 1e-4, double beta_end = 0.02,
                                  std::size_t refine_depth = 5);
  /// Explicit betas (each in [0, 1)); used for test schedules such as all zeros.
  static DiffusionSchedule from_betas(std::vector<double> betas, std::size_t refine_depth = 5);

  std::size_t total_steps() const { return betas.size(); }
  std::size_t refine_depth() const { return refine_steps.size(); }
};

/// tau^{gamma+1} = sqrt(abar_gamma) tau0 + sqrt(1 - abar_gamma) eps
nn::Tensor q_sample(const DiffusionSchedule& schedule, const nn::Tensor& tau0, std::size_t gamma,
                    const nn::Tensor& eps);

/// tau^gamma = (tau^{gamma+1} - (1 - alpha)/sqrt(1 - abar) eps_hat) / sqrt(alpha) + sqrt(1 - alpha) z
nn::Tensor denoise_step(const DiffusionSchedule& schedule, const nn::Tensor& tau_next, std::size_t gamma,
                        const nn::Tensor& eps_hat, const nn::Tensor& z);
nn::Var denoise_step(nn::Graph& g, const DiffusionSchedule& schedule, nn::Var tau_next, std::size_t gamma,
                     nn::Var eps_hat, const nn::Tensor& z);

/// Noise prediction for a batch of trajectories at reverse step gamma.
using NoiseEstimate = std::function<nn::Tensor(const nn::Tensor& tau_next, std::size_t gamma)>;
/// Supplies z for a reverse step; return an empty tensor for z = 0.
using NoiseDraw = std::function<nn::Tensor(std::size_t gamma, std::size_t rows, std::size_t cols)>;

/// Treats tau_star as a sample at level refine_depth and walks every refine step
/// down to gamma = 0. A null `draw` means z = 0 throughout.
nn::Tensor refine(const DiffusionSchedule& schedule, const nn::Tensor& tau_star, const NoiseEstimate& estimate,
                  const NoiseDraw& draw = {});

/// L2 norm of (eps - estimate(q_sample(tau0, gamma, eps), gamma)) for gamma drawn
/// uniformly over the whole schedule and eps ~ N(0, I).
double noise_estimation_loss(const DiffusionSchedule& schedule, const nn::Tensor& tau0, const NoiseEstimate& estimate,
                             Rng& rng);

/// Sinusoidal embedding of the 1-based step number.
std::vector<double> step_embedding(std::size_t step, std::size_t dim);

struct NoiseEstimatorConfig {
  std::size_t hidden = 256;
  std::size_t step_embedding = 16;
};

/// Dense noise estimator f_eps(tau, c, step). The first layer is split into a
/// trajectory part, a context part and a step part, which equals one dense layer
/// over their concatenation but lets the context projection be computed once
/// per scene and shared by every mode and step.
class NoiseEstimator {
 public:
  static NoiseEstimator create(nn::ParamStore& params, const std::string& prefix, const std::string& group,
                               std::size_t trajectory_width, std::size_t embedding_width,
                               const NoiseEstimatorConfig& config, Rng& rng);
  static NoiseEstimator bind(const nn::ParamStore& params, const std::string& prefix, const NoiseEstimatorConfig& config);

  /// embedding: B x E -> B x hidden
  nn::Var project_context(nn::Graph& g, nn::Var embedding) const;
  /// tau: R x width, context_rows: R x hidden (projected context repeated per row).
  nn::Var estimate(nn::Graph& g, nn::Var tau, nn::Var context_rows, std::size_t step) const;
  /// Same, with one step number per row.
  nn::Var estimate(nn::Graph& g, nn::Var tau, nn::Var context_rows, std::span<const std::size_t> steps) const;

  std::size_t trajectory_width() const { return trajectory_in_.in; }

 private:
  NoiseEstimatorConfig config_;
  std::string context_weight_;
  std::string step_weight_;
  nn::DenseLayer trajectory_in_;
  nn::DenseLayer hidden_;
  nn::DenseLayer out_;
};

}  // namespace dragtraffic
