#include "offramp/adam.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace offramp {

AdamState AdamState::init(const std::vector<Tensor>& params, AdamConfig config) {
  AdamState state;
  state.config = config;
  state.first_moment.reserve(params.size());
  state.second_moment.reserve(params.size());
  for (const Tensor& p : params) {
    state.first_moment.emplace_back(p.size(), 0.0);
    state.second_moment.emplace_back(p.size(), 0.0);
  }
  return state;
}

void adam_step(std::vector<Tensor>& params, AdamState& state) {
  if (params.size() != state.first_moment.size()) {
    throw std::invalid_argument("adam_step: state tracks " + std::to_string(state.first_moment.size()) +
                                " parameters, got " + std::to_string(params.size()));
  }
  const AdamConfig& c = state.config;
  state.step += 1;
  const double bias1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (state.first_moment[i].size() != p.size()) {
      throw std::invalid_argument("adam_step: parameter " + std::to_string(i) + " shape " +
                                  shape_to_string(p.shape()) + " does not match optimizer state of " +
                                  std::to_string(state.first_moment[i].size()) + " elements");
    }
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    auto& values = p.data();
    const bool has_grad = p.has_grad();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = has_grad ? p.grad()[j] : 0.0;
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
      const double m_hat = m[j] / bias1;
      const double v_hat = v[j] / bias2;
      values[j] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

void clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (Tensor& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const double factor = max_norm / norm;
  for (Tensor& p : params) {
    if (!p.has_grad()) continue;
    for (double& g : p.grad()) g *= factor;
  }
}

}  // namespace offramp
