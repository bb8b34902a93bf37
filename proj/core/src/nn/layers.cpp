#include "dragtraffic/nn/layers.hpp"

#include <cmath>

#include "dragtraffic/nn/ops.hpp"

namespace dragtraffic::nn {

DenseLayer DenseLayer::create(ParamStore& params, const std::string& name, const std::string& group, std::size_t in,
                              std::size_t out, Rng& rng, double gain) {
  const double limit = gain * std::sqrt(6.0 / static_cast<double>(in));
  Tensor w = Tensor::matrix(in, out);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-limit, limit);
  params.add(name + ".w", group, std::move(w));
  params.add(name + ".b", group, Tensor::matrix(1, out));
  return DenseLayer{name + ".w", name + ".b", in, out};
}

DenseLayer DenseLayer::bind(const ParamStore& params, const std::string& name) {
  const Tensor& w = params.value(name + ".w");
  return DenseLayer{name + ".w", name + ".b", w.rows(), w.cols()};
}

Var DenseLayer::operator()(Graph& g, Var x) const { return dense(g, x, g.param(weight), g.param(bias)); }

}  // namespace dragtraffic::nn
