#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "tasc/autodiff.hpp"

namespace tasc {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Coupled l2: weight_decay * theta is added to the gradient before the
  // moment updates.
  double weight_decay = 1e-4;
};

struct AdamState {
  AdamOptions options;
  std::size_t step_count = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  /// Zero moments shaped like params.
  static AdamState init(const std::vector<ad::Tensor>& params, AdamOptions options = {});
};

/// One bias-corrected Adam update of every parameter from its current grad.
/// A parameter without a grad is treated as having a zero gradient. Throws
/// std::runtime_error naming the parameter when a gradient is not finite.
void adam_step(std::vector<ad::Tensor>& params, AdamState& state);

}  // namespace tasc
