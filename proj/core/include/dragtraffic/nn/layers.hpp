#pragma once

#include <string>

#include "dragtraffic/nn/graph.hpp"
#include "dragtraffic/nn/params.hpp"
#include "dragtraffic/rng.hpp"

namespace dragtraffic::nn {

/// Names of one affine layer's weight [in x out] and bias [1 x out].
struct DenseLayer {
  std::string weight;
  std::string bias;
  std::size_t in = 0;
  std::size_t out = 0;

  /// Registers uniform He-initialised weights (scaled by `gain`) and zero bias.
  static DenseLayer create(ParamStore& params, const std::string& name, const std::string& group, std::size_t in,
                           std::size_t out, Rng& rng, double gain = 1.0);
  /// Binds to already-registered parameters (e.g. from a checkpoint).
  static DenseLayer bind(const ParamStore& params, const std::string& name);

  Var operator()(Graph& g, Var x) const;
};

}  // namespace dragtraffic::nn
