#include "dragtraffic/diffusion.hpp"

#include <cmath>

#include "dragtraffic/error.hpp"
#include "dragtraffic/nn/ops.hpp"

namespace dragtraffic {

namespace {

// Bias-free weight; the trajectory layer carries the shared first-layer bias.
std::string create_weight(nn::ParamStore& params, const std::string& name, const std::string& group, std::size_t in,
                          std::size_t out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in));
  nn::Tensor w = nn::Tensor::matrix(in, out);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-limit, limit);
  params.add(name + ".w", group, std::move(w));
  return name + ".w";
}

void check_gamma(const DiffusionSchedule& s, std::size_t gamma) {
  if (gamma >= s.total_steps()) {
    throw ValidationError("diffusion step " + std::to_string(gamma) + " outside schedule of " +
                          std::to_string(s.total_steps()));
  }
}

}  // namespace

DiffusionSchedule DiffusionSchedule::linear(std::size_t total_steps, double beta_start, double beta_end,
                                            std::size_t refine_depth) {
  if (total_steps == 0) throw ValidationError("schedule needs at least one step");
  std::vector<double> betas(total_steps);
  for (std::size_t i = 0; i < total_steps; ++i) {
    const double frac = total_steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(total_steps - 1);
    betas[i] = beta_start + (beta_end - beta_start) * frac;
  }
  return from_betas(std::move(betas), refine_depth);
}

DiffusionSchedule DiffusionSchedule::from_betas(std::vector<double> betas, std::size_t refine_depth) {
  if (betas.empty() || refine_depth == 0 || refine_depth > betas.size()) {
    throw ValidationError("invalid schedule: " + std::to_string(betas.size()) + " steps, refine depth " +
                          std::to_string(refine_depth));
  }
  DiffusionSchedule s;
  s.betas = std::move(betas);
  double prod = 1.0;
  for (double b : s.betas) {
    if (!(b >= 0.0 && b < 1.0)) throw ValidationError("beta values must lie in [0, 1)");
    s.alphas.push_back(1.0 - b);
    prod *= 1.0 - b;
    s.alpha_bars.push_back(prod);
  }
  for (std::size_t k = refine_depth; k-- > 0;) s.refine_steps.push_back(k);
  return s;
}

nn::Tensor q_sample(const DiffusionSchedule& schedule, const nn::Tensor& tau0, std::size_t gamma,
                    const nn::Tensor& eps) {
  check_gamma(schedule, gamma);
  if (!tau0.same_shape(eps)) throw ShapeError("q_sample: noise shape differs from trajectory shape");
  const double a = std::sqrt(schedule.alpha_bars[gamma]);
  const double b = std::sqrt(1.0 - schedule.alpha_bars[gamma]);
  nn::Tensor out = tau0;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * tau0[i] + b * eps[i];
  return out;
}

nn::Tensor denoise_step(const DiffusionSchedule& schedule, const nn::Tensor& tau_next, std::size_t gamma,
                        const nn::Tensor& eps_hat, const nn::Tensor& z) {
  check_gamma(schedule, gamma);
  if (!tau_next.same_shape(eps_hat)) throw ShapeError("denoise_step: estimate shape differs from trajectory shape");
  if (z.size() != 0 && !tau_next.same_shape(z)) throw ShapeError("denoise_step: z shape differs from trajectory shape");
  const double alpha = schedule.alphas[gamma];
  const double abar = schedule.alpha_bars[gamma];
  // abar == 1 only for a zero-noise schedule, where the estimate carries no weight.
  const double coef = abar < 1.0 ? (1.0 - alpha) / std::sqrt(1.0 - abar) : 0.0;
  const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
  const double sigma = std::sqrt(1.0 - alpha);
  nn::Tensor out = tau_next;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = inv_sqrt_alpha * (tau_next[i] - coef * eps_hat[i]);
    if (z.size() != 0) out[i] += sigma * z[i];
  }
  return out;
}

nn::Var denoise_step(nn::Graph& g, const DiffusionSchedule& schedule, nn::Var tau_next, std::size_t gamma,
                     nn::Var eps_hat, const nn::Tensor& z) {
  check_gamma(schedule, gamma);
  const double alpha = schedule.alphas[gamma];
  const double abar = schedule.alpha_bars[gamma];
  const double coef = abar < 1.0 ? (1.0 - alpha) / std::sqrt(1.0 - abar) : 0.0;
  nn::Var mean = nn::scale(g, nn::sub(g, tau_next, nn::scale(g, eps_hat, coef)), 1.0 / std::sqrt(alpha));
  if (z.size() == 0) return mean;
  nn::Tensor noise = z;
  const double sigma = std::sqrt(1.0 - alpha);
  for (std::size_t i = 0; i < noise.size(); ++i) noise[i] *= sigma;
  return nn::add(g, mean, g.constant(std::move(noise)));
}

nn::Tensor refine(const DiffusionSchedule& schedule, const nn::Tensor& tau_star, const NoiseEstimate& estimate,
                  const NoiseDraw& draw) {
  nn::Tensor tau = tau_star;
  for (std::size_t gamma : schedule.refine_steps) {
    const nn::Tensor eps_hat = estimate(tau, gamma);
    const nn::Tensor z = draw ? draw(gamma, tau.rows(), tau.cols()) : nn::Tensor();
    tau = denoise_step(schedule, tau, gamma, eps_hat, z);
  }
  return tau;
}

double noise_estimation_loss(const DiffusionSchedule& schedule, const nn::Tensor& tau0, const NoiseEstimate& estimate,
                             Rng& rng) {
  if (tau0.size() == 0) throw ValidationError("noise estimation loss needs a ground-truth trajectory");
  const auto gamma = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(schedule.total_steps()) - 1));
  nn::Tensor eps(std::vector<std::size_t>{tau0.rows(), tau0.cols()});
  for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = rng.normal();
  const nn::Tensor predicted = estimate(q_sample(schedule, tau0, gamma, eps), gamma);
  double sq = 0.0;
  for (std::size_t i = 0; i < eps.size(); ++i) sq += (eps[i] - predicted[i]) * (eps[i] - predicted[i]);
  return std::sqrt(sq);
}

std::vector<double> step_embedding(std::size_t step, std::size_t dim) {
  std::vector<double> out(dim);
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
    out[i] = std::sin(static_cast<double>(step) * freq);
    out[half + i] = std::cos(static_cast<double>(step) * freq);
  }
  return out;
}

NoiseEstimator NoiseEstimator::create(nn::ParamStore& params, const std::string& prefix, const std::string& group,
                                      std::size_t trajectory_width, std::size_t embedding_width,
                                      const NoiseEstimatorConfig& config, Rng& rng) {
  NoiseEstimator est;
  est.config_ = config;
  est.trajectory_in_ = nn::DenseLayer::create(params, prefix + ".traj_in", group, trajectory_width, config.hidden, rng);
  est.step_weight_ = create_weight(params, prefix + ".step_in", group, config.step_embedding, config.hidden, rng);
  est.context_weight_ = create_weight(params, prefix + ".ctx_in", group, embedding_width, config.hidden, rng);
  est.hidden_ = nn::DenseLayer::create(params, prefix + ".hidden", group, config.hidden, config.hidden, rng);
  est.out_ = nn::DenseLayer::create(params, prefix + ".out", group, config.hidden, trajectory_width, rng, 0.1);
  return est;
}

NoiseEstimator NoiseEstimator::bind(const nn::ParamStore& params, const std::string& prefix,
                                    const NoiseEstimatorConfig& config) {
  NoiseEstimator est;
  est.config_ = config;
  est.trajectory_in_ = nn::DenseLayer::bind(params, prefix + ".traj_in");
  est.step_weight_ = prefix + ".step_in.w";
  est.context_weight_ = prefix + ".ctx_in.w";
  params.value(est.step_weight_);
  params.value(est.context_weight_);
  est.hidden_ = nn::DenseLayer::bind(params, prefix + ".hidden");
  est.out_ = nn::DenseLayer::bind(params, prefix + ".out");
  return est;
}

nn::Var NoiseEstimator::project_context(nn::Graph& g, nn::Var embedding) const {
  return nn::matmul(g, embedding, g.param(context_weight_));
}

nn::Var NoiseEstimator::estimate(nn::Graph& g, nn::Var tau, nn::Var context_rows, std::size_t step) const {
  using namespace nn;
  const Tensor emb = Tensor::row(step_embedding(step, config_.step_embedding));
  Var step_row = matmul(g, g.constant(emb), g.param(step_weight_));
  Var h = add_row(g, add(g, trajectory_in_(g, tau), context_rows), step_row);
  h = relu(g, h);
  h = relu(g, hidden_(g, h));
  return out_(g, h);
}

nn::Var NoiseEstimator::estimate(nn::Graph& g, nn::Var tau, nn::Var context_rows,
                                 std::span<const std::size_t> steps) const {
  using namespace nn;
  if (steps.size() != g.value(tau).rows()) throw ShapeError("one diffusion step per trajectory row required");
  Tensor emb = Tensor::matrix(steps.size(), config_.step_embedding);
  for (std::size_t r = 0; r < steps.size(); ++r) {
    const auto e = step_embedding(steps[r], config_.step_embedding);
    std::copy(e.begin(), e.end(), emb.raw() + r * config_.step_embedding);
  }
  Var step_rows = matmul(g, g.constant(std::move(emb)), g.param(step_weight_));
  Var h = relu(g, add(g, add(g, trajectory_in_(g, tau), context_rows), step_rows));
  h = relu(g, hidden_(g, h));
  return out_(g, h);
}

}  // namespace dragtraffic
