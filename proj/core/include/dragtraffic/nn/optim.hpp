#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "dragtraffic/nn/params.hpp"

namespace dragtraffic::nn {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates plus the step counter.
struct AdamState {
  std::map<std::string, Tensor, std::less<>> m;
  std::map<std::string, Tensor, std::less<>> v;
  std::int64_t step = 0;
};

/// One Adam update. Every gradient is checked for NaN/Inf before anything is
/// written; on failure NumericError names the offending parameter and the
/// store is untouched. Frozen groups are skipped.
void adam_step(ParamStore& params, const Gradients& grads, AdamState& state, double lr,
               const AdamConfig& config = {});

/// Linear decay from `start` to `end` across `total_steps` updates.
class LinearDecay {
 public:
  LinearDecay(double start, double end, std::int64_t total_steps)
      : start_(start), end_(end), total_(total_steps) {}
  double operator()(std::int64_t step) const;

 private:
  double start_;
  double end_;
  std::int64_t total_;
};

}  // namespace dragtraffic::nn
