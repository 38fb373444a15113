#include <cmath>
#include <stdexcept>

#include <doctest.h>

#include "offramp/adam.hpp"

using namespace offramp;

TEST_CASE("zero gradient leaves parameters unchanged") {
  std::vector<Tensor> params = {Tensor::from_data({2}, {1.5, -2.5}, true)};
  params[0].zero_grad();  // allocates an all-zero gradient
  AdamState state = AdamState::init(params);
  adam_step(params, state);
  CHECK(params[0].data() == std::vector<double>{1.5, -2.5});
  CHECK(state.step == 1);
}

TEST_CASE("one step on w^2 decreases the objective") {
  std::vector<Tensor> params = {Tensor::from_data({1}, {1.0}, true)};
  params[0].grad()[0] = 2.0;  // d/dw w^2 at w=1
  AdamState state = AdamState::init(params);
  adam_step(params, state);
  const double w = params[0].data()[0];
  CHECK(w < 1.0);
  CHECK(w * w < 1.0);
}

TEST_CASE("200 steps converge to the minimizer of a 2-D quadratic") {
  // f(w) = (w0 - 3)^2 + 2 (w1 + 1)^2, minimizer (3, -1).
  std::vector<Tensor> params = {Tensor::from_data({2}, {1.0, 1.0}, true)};
  AdamConfig config;
  config.learning_rate = 0.1;
  AdamState state = AdamState::init(params, config);
  for (int step = 0; step < 200; ++step) {
    const double w0 = params[0].data()[0];
    const double w1 = params[0].data()[1];
    params[0].zero_grad();
    params[0].grad()[0] = 2.0 * (w0 - 3.0);
    params[0].grad()[1] = 4.0 * (w1 + 1.0);
    adam_step(params, state);
  }
  CHECK(std::abs(params[0].data()[0] - 3.0) < 1e-3);
  CHECK(std::abs(params[0].data()[1] + 1.0) < 1e-3);
  CHECK(state.step == 200);
}

TEST_CASE("state/parameter mismatches are rejected") {
  std::vector<Tensor> params = {Tensor::from_data({2}, {0.0, 0.0}, true)};
  AdamState state = AdamState::init(params);
  std::vector<Tensor> wrong_count = {params[0], params[0]};
  CHECK_THROWS_AS(adam_step(wrong_count, state), std::invalid_argument);
  std::vector<Tensor> wrong_shape = {Tensor::from_data({3}, {0, 0, 0}, true)};
  CHECK_THROWS_AS(adam_step(wrong_shape, state), std::invalid_argument);
}

TEST_CASE("gradient clipping caps the global norm") {
  std::vector<Tensor> params = {Tensor::from_data({2}, {0.0, 0.0}, true)};
  params[0].grad() = {3.0, 4.0};  // norm 5
  clip_grad_norm(params, 1.0);
  const auto& g = params[0].grad();
  CHECK(std::abs(std::sqrt(g[0] * g[0] + g[1] * g[1]) - 1.0) < 1e-12);

  params[0].grad() = {0.3, 0.4};  // norm 0.5, already inside the bound
  clip_grad_norm(params, 1.0);
  CHECK(params[0].grad() == std::vector<double>{0.3, 0.4});
}
