#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "cgpo/errors.hpp"
#include "cgpo/mlp.hpp"
#include "cgpo/tensor.hpp"

namespace cgpo {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
};

/// One bias-corrected Adam update. Accumulators are created on first use.
inline void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state,
                      double lr) {
  if (params.size() != grads.size()) throw DimensionError("adam_step: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(grads[i])) {
      throw DimensionError("adam_step: gradient " + std::to_string(i) + " has shape " +
                           shape_string(grads[i].shape()) + ", parameter " +
                           shape_string(params[i]->shape()));
    }
    if (!grads[i].all_finite()) throw NumericError("adam_step: non-finite gradient");
  }
  if (state.first_moment.empty()) {
    for (const Tensor* p : params) {
      state.first_moment.push_back(zeros_like(*p));
      state.second_moment.push_back(zeros_like(*p));
    }
  } else if (state.first_moment.size() != params.size()) {
    throw DimensionError("adam_step: optimizer state belongs to a different parameter set");
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    const Tensor& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

inline void adam_step(Mlp& net, std::span<const Tensor> grads, AdamState& state, double lr) {
  auto params = net.parameters();
  adam_step(std::span<Tensor* const>(params), grads, state, lr);
}

}  // namespace cgpo
