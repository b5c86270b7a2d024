#include "tasc/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace tasc {

AdamState AdamState::init(const std::vector<ad::Tensor>& params, AdamOptions options) {
  AdamState s;
  s.options = options;
  for (const auto& p : params) {
    s.first_moment.emplace_back(p.size(), 0.0);
    s.second_moment.emplace_back(p.size(), 0.0);
  }
  return s;
}

void adam_step(std::vector<ad::Tensor>& params, AdamState& state) {
  if (params.size() != state.first_moment.size()) {
    throw std::invalid_argument("adam_step: state tracks " +
                                std::to_string(state.first_moment.size()) +
                                " parameters, got " + std::to_string(params.size()));
  }
  const auto& opt = state.options;
  // validate everything before touching any value so a bad gradient leaves
  // the model untouched
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (state.first_moment[p].size() != params[p].size()) {
      throw std::invalid_argument("adam_step: moment shape mismatch for '" +
                                  params[p].name() + "'");
    }
    if (!params[p].has_grad()) continue;
    for (double g : params[p].grad()) {
      if (!std::isfinite(g)) {
        throw std::runtime_error("adam_step: non-finite gradient in parameter '" +
                                 params[p].name() + "'");
      }
    }
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(opt.beta1, t);
  const double bc2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto theta = params[p].mutable_values();
    const bool has = params[p].has_grad();
    std::span<const double> grad = has ? params[p].grad() : std::span<const double>{};
    auto& m = state.first_moment[p];
    auto& v = state.second_moment[p];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = (has ? grad[i] : 0.0) + opt.weight_decay * theta[i];
      m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g;
      v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g * g;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      theta[i] -= opt.learning_rate * m_hat / (std::sqrt(v_hat) + opt.epsilon);
    }
  }
}

}  // namespace tasc
