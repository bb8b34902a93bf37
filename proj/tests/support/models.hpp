#pragma once

#include "dragtraffic/model.hpp"

namespace dragtraffic::testing {

/// Narrow network for fast tests; same structure as the default.
inline ModelConfig tiny_config(AgentType type = AgentType::Vehicle) {
  ModelConfig c;
  c.agent_type = type;
  c.encoder.hidden = 16;
  c.encoder.mcg_blocks = 2;
  c.encoder.condition_hidden = 32;
  c.encoder.embedding = 32;
  c.encoder.max_lane_segments = 48;
  c.initializer.trunk = 32;
  c.estimator.hidden = 32;
  c.estimator.step_embedding = 8;
  return c;
}

}  // namespace dragtraffic::testing
