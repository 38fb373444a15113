#pragma once

#include <cstdint>
#include <vector>

#include "offramp/tensor.hpp"

namespace offramp {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Per-parameter first/second moment estimates plus the shared step counter.
struct AdamState {
  AdamConfig config;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step = 0;

  static AdamState init(const std::vector<Tensor>& params, AdamConfig config = {});
};

// One bias-corrected Adam update, applied in place. Parameters with no
// populated gradient are treated as zero-gradient (left unchanged by the
// gradient term but still subject to moment decay bookkeeping).
void adam_step(std::vector<Tensor>& params, AdamState& state);

// Scales all gradients so their global L2 norm is at most max_norm.
// No-op when max_norm <= 0 or the norm is already within bounds.
void clip_grad_norm(std::vector<Tensor>& params, double max_norm);

}  // namespace offramp
