#include "dragtraffic/nn/optim.hpp"

#include <algorithm>
#include <cmath>

#include "dragtraffic/error.hpp"

namespace dragtraffic::nn {

void adam_step(ParamStore& params, const Gradients& grads, AdamState& state, double lr,
               const AdamConfig& config) {
  for (const auto& [name, g] : grads) {
    if (!g.all_finite()) throw NumericError("non-finite gradient for parameter '" + name + "'");
    if (!g.same_shape(params.value(name))) throw ShapeError("gradient shape mismatch for '" + name + "'");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (const auto& [name, g] : grads) {
    if (params.frozen(name)) continue;
    Tensor& w = params.value(name);
    auto [mit, _m] = state.m.try_emplace(name, Tensor(w.shape(), 0.0));
    auto [vit, _v] = state.v.try_emplace(name, Tensor(w.shape(), 0.0));
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
}

double LinearDecay::operator()(std::int64_t step) const {
  if (total_ <= 1) return start_;
  const double frac = std::clamp(static_cast<double>(step) / static_cast<double>(total_ - 1), 0.0, 1.0);
  return start_ + (end_ - start_) * frac;
}

}  // namespace dragtraffic::nn
