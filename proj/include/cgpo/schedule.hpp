#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <string>
#include <vector>

#include "cgpo/errors.hpp"
#include "cgpo/tensor.hpp"

namespace cgpo {

/// DDPM variance schedule for steps t = 1..T.
///
/// Arrays are indexed by t and have length T + 1. Index 0 holds the
/// convention values beta = 0, alpha = alpha_bar = 1, sigma = 0.
/// sigma_t^2 = beta_t (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t), which makes
/// sigma_1 = 0: the last reverse step is deterministic.
struct DiffusionSchedule {
  int steps = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  std::vector<double> one_minus_alpha_bar;  // 1 - alpha_bar without cancellation
  std::vector<double> sigma;

  void check_step(int t) const {
    if (t < 1 || t > steps) {
      throw IndexError("diffusion step " + std::to_string(t) + " outside 1.." + std::to_string(steps));
    }
  }

  double sqrt_alpha_bar(int t) const { return std::sqrt(alpha_bar[static_cast<std::size_t>(t)]); }
  double sqrt_one_minus_alpha_bar(int t) const {
    return std::sqrt(one_minus_alpha_bar[static_cast<std::size_t>(t)]);
  }

  /// Coefficients (on x_t, on x0_hat) of the reverse-process mean at step t.
  std::pair<double, double> mean_coefficients(int t) const {
    check_step(t);
    const auto i = static_cast<std::size_t>(t);
    const double one_minus = one_minus_alpha_bar[i];
    return {std::sqrt(alpha[i]) * one_minus_alpha_bar[i - 1] / one_minus,
            std::sqrt(alpha_bar[i - 1]) * beta[i] / one_minus};
  }
};

/// Linearly spaced betas from beta_min (t = 1) to beta_max (t = T).
inline DiffusionSchedule make_schedule(int steps, double beta_min, double beta_max) {
  if (steps <= 0) throw ConfigError("diffusion step count T must be positive");
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0)) {
    throw ConfigError("beta bounds must satisfy 0 < beta_min <= beta_max < 1");
  }
  DiffusionSchedule s;
  s.steps = steps;
  const auto n = static_cast<std::size_t>(steps) + 1;
  s.beta.assign(n, 0.0);
  s.alpha.assign(n, 1.0);
  s.alpha_bar.assign(n, 1.0);
  s.one_minus_alpha_bar.assign(n, 0.0);
  s.sigma.assign(n, 0.0);
  double log_alpha_bar = 0.0;
  for (int t = 1; t <= steps; ++t) {
    const auto i = static_cast<std::size_t>(t);
    const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(steps - 1);
    s.beta[i] = beta_min + (beta_max - beta_min) * frac;
    s.alpha[i] = 1.0 - s.beta[i];
    s.alpha_bar[i] = s.alpha_bar[i - 1] * s.alpha[i];
    log_alpha_bar += std::log1p(-s.beta[i]);
    s.one_minus_alpha_bar[i] = -std::expm1(log_alpha_bar);
    s.sigma[i] = std::sqrt(s.beta[i] * s.one_minus_alpha_bar[i - 1] / s.one_minus_alpha_bar[i]);
  }
  return s;
}

namespace detail {
inline void require_same_length(std::span<const double> a, std::span<const double> b, const char* op) {
  if (a.size() != b.size()) {
    throw DimensionError(std::string(op) + ": lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  }
}
}  // namespace detail

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
inline std::vector<double> forward_noise(std::span<const double> x0, int t, std::span<const double> eps,
                                         const DiffusionSchedule& sched) {
  sched.check_step(t);
  detail::require_same_length(x0, eps, "forward_noise");
  const double a = sched.sqrt_alpha_bar(t);
  const double b = sched.sqrt_one_minus_alpha_bar(t);
  std::vector<double> out(x0.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

/// Clean-action estimate implied by a noise prediction (inverse of forward_noise).
inline std::vector<double> predict_x0(std::span<const double> x_t, std::span<const double> eps_pred, int t,
                                      const DiffusionSchedule& sched) {
  sched.check_step(t);
  detail::require_same_length(x_t, eps_pred, "predict_x0");
  const double a = sched.sqrt_alpha_bar(t);
  const double b = sched.sqrt_one_minus_alpha_bar(t);
  std::vector<double> out(x_t.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (x_t[i] - b * eps_pred[i]) / a;
  return out;
}

inline std::vector<double> reverse_mean(std::span<const double> x_t, std::span<const double> x0_hat, int t,
                                        const DiffusionSchedule& sched) {
  detail::require_same_length(x_t, x0_hat, "reverse_mean");
  const auto [cx, c0] = sched.mean_coefficients(t);
  std::vector<double> out(x_t.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = cx * x_t[i] + c0 * x0_hat[i];
  return out;
}

// Batched forms over {B, d} tensors.

inline Tensor predict_x0(const Tensor& x_t, const Tensor& eps_pred, int t, const DiffusionSchedule& sched) {
  sched.check_step(t);
  if (!x_t.same_shape(eps_pred)) throw DimensionError("predict_x0: shape mismatch");
  const double a = sched.sqrt_alpha_bar(t);
  const double b = sched.sqrt_one_minus_alpha_bar(t);
  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (x_t[i] - b * eps_pred[i]) / a;
  return out;
}

inline Tensor reverse_mean(const Tensor& x_t, const Tensor& x0_hat, int t, const DiffusionSchedule& sched) {
  if (!x_t.same_shape(x0_hat)) throw DimensionError("reverse_mean: shape mismatch");
  const auto [cx, c0] = sched.mean_coefficients(t);
  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = cx * x_t[i] + c0 * x0_hat[i];
  return out;
}

}  // namespace cgpo
