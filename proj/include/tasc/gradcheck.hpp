#pragma once

#include <functional>
#include <vector>

#include "tasc/autodiff.hpp"

namespace tasc {

/// Compares analytic gradients of a scalar loss against central differences.
///
/// loss_fn must rebuild the graph from the current parameter values on every
/// call. Returns the largest |analytic - numeric| / max(|analytic|, |numeric|,
/// 1e-8) over every parameter entry. Parameter values are restored and their
/// grads hold the analytic gradient afterwards.
double finite_diff_check(const std::function<ad::Tensor()>& loss_fn,
                         std::vector<ad::Tensor>& params, double eps = 1e-5);

}  // namespace tasc
