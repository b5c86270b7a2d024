#include "tasc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tasc {

namespace {

double eval_loss(const std::function<ad::Tensor()>& loss_fn) {
  ad::NoGradGuard guard;
  const double v = loss_fn().item();
  if (!std::isfinite(v)) throw std::runtime_error("finite_diff_check: loss is not finite");
  return v;
}

}  // namespace

double finite_diff_check(const std::function<ad::Tensor()>& loss_fn,
                         std::vector<ad::Tensor>& params, double eps) {
  if (!(eps > 0.0) || !std::isfinite(eps)) {
    throw std::invalid_argument("finite_diff_check: eps must be positive and finite");
  }
  for (auto& p : params) p.zero_grad();
  ad::Tensor loss = loss_fn();
  if (!std::isfinite(loss.item())) {
    throw std::runtime_error("finite_diff_check: loss is not finite");
  }
  ad::backward(loss);

  double worst = 0.0;
  for (auto& p : params) {
    std::vector<double> analytic(p.size(), 0.0);
    if (p.has_grad()) {
      auto g = p.grad();
      std::copy(g.begin(), g.end(), analytic.begin());
    }
    auto theta = p.mutable_values();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double orig = theta[i];
      theta[i] = orig + eps;
      const double up = eval_loss(loss_fn);
      theta[i] = orig - eps;
      const double down = eval_loss(loss_fn);
      theta[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace tasc
