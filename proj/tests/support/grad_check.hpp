#pragma once

// Central finite-difference oracle for parameter and input gradients. It only
// evaluates the forward function, so it shares no code with Graph::backward.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "dragtraffic/nn/graph.hpp"
#include "dragtraffic/nn/params.hpp"
#include "dragtraffic/rng.hpp"

namespace dragtraffic::testing {

/// Relative error with an absolute floor so that near-zero gradients compare
/// by absolute difference.
inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Adds small noise to every parameter so that zero-initialised biases do not
/// park ReLU inputs exactly on the kink.
inline void jitter_params(nn::ParamStore& params, Rng& rng, double scale = 0.05) {
  for (const auto& [name, param] : params.entries()) {
    nn::Tensor& w = params.value(name);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += scale * rng.normal();
  }
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

/// `loss` builds a fresh graph over `params` and returns the scalar loss value.
/// `analytic` holds gradients from backward(). Every entry of every listed
/// parameter is perturbed by +-eps (at most `max_per_param` entries each,
/// evenly strided, to bound runtime).
inline GradCheckResult check_param_gradients(nn::ParamStore& params, const nn::Gradients& analytic,
                                             const std::function<double()>& loss, double eps = 1e-6,
                                             std::size_t max_per_param = 64) {
  GradCheckResult result;
  for (const auto& [name, g] : analytic) {
    nn::Tensor& w = params.value(name);
    const std::size_t n = w.size();
    const std::size_t stride = std::max<std::size_t>(1, n / max_per_param);
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = w[i];
      w[i] = saved + eps;
      const double up = loss();
      w[i] = saved - eps;
      const double down = loss();
      w[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = relative_error(g[i], numeric);
      ++result.checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = name + "[" + std::to_string(i) + "] analytic=" + std::to_string(g[i]) +
                       " numeric=" + std::to_string(numeric);
      }
    }
  }
  return result;
}

}  // namespace dragtraffic::testing
