#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cgpo/autodiff.hpp"
#include "cgpo/concepts.hpp"
#include "cgpo/diffusion_policy.hpp"
#include "cgpo/errors.hpp"
#include "cgpo/rng.hpp"
#include "cgpo/schedule.hpp"
#include "cgpo/tensor.hpp"

namespace cgpo {

enum class GuidanceMode { dsg, naive, off };

inline std::string to_string(GuidanceMode m) {
  switch (m) {
    case GuidanceMode::dsg: return "dsg";
    case GuidanceMode::naive: return "naive";
    case GuidanceMode::off: return "off";
  }
  return "off";
}

inline GuidanceMode guidance_mode_from_string(const std::string& s) {
  if (s == "dsg") return GuidanceMode::dsg;
  if (s == "naive") return GuidanceMode::naive;
  if (s == "off") return GuidanceMode::off;
  throw ConfigError("unknown guidance mode '" + s + "'");
}

struct GuidanceConfig {
  int guided_steps = 10;         // G: guidance active for t <= G
  double rate = 0.95;            // rho
  double stabilizer = 1e-8;      // added to both normalizing norms
  GuidanceMode mode = GuidanceMode::dsg;
  std::optional<double> naive_step;  // eta_t for naive mode; sigma_t^2 when unset
  double x0_clip_factor = 1.5;   // critic sees x0_hat clipped to this multiple of the action box

  void validate(int diffusion_steps) const {
    if (guided_steps < 0 || guided_steps > diffusion_steps) throw ConfigError("guidance steps G must lie in [0, T]");
    if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("guidance rate rho must lie in [0, 1]");
    if (!(stabilizer > 0.0)) throw ConfigError("guidance stabilizer must be positive");
    if (naive_step && !(*naive_step >= 0.0)) throw ConfigError("naive guidance step must be >= 0");
    if (!(x0_clip_factor >= 1.0)) throw ConfigError("x0 clip factor must be >= 1");
  }
};

/// Gradient of -Q(s, x0_hat(x_t)) w.r.t. x_t, plus the unclipped x0_hat from
/// the same network pass.
struct GuidanceProbe {
  Tensor gradient;
  Tensor x0_hat;
};

template <ActionCritic Critic>
GuidanceProbe guidance_probe(const DiffusionPolicy& policy, const Critic& critic, const Tensor& states,
                             const Tensor& x_t, int t, double x0_clip_factor = 1.5) {
  const auto& sched = policy.schedule();
  sched.check_step(t);
  Tape tape;
  auto params = policy.eps_net().bind(tape, false);
  Var x = tape.variable(x_t);
  Var eps = policy.predict_noise(params, x, states, t);
  const double a = sched.sqrt_alpha_bar(t);
  const double b = sched.sqrt_one_minus_alpha_bar(t);
  Var x0 = ad::lincomb(x, 1.0 / a, eps, -b / a);
  const ActionBox wide = policy.box().widened(x0_clip_factor);
  Var clipped = ad::clip_cols(x0, wide.low, wide.high);
  Var q = critic.evaluate(states, clipped);
  Var objective = ad::scale(ad::sum(q), -1.0);
  GuidanceProbe probe{Tensor{}, tape.value(x0)};
  tape.backward(objective);
  probe.gradient = tape.grad(x);
  if (!probe.gradient.all_finite()) {
    std::ostringstream os;
    os << "non-finite guidance gradient at diffusion step " << t << " (|x_t| = " << l2_norm(x_t.values()) << ")";
    throw NumericError(os.str(), t);
  }
  return probe;
}

/// g_t = grad_{x_t} [ -Q(s, x0_hat(x_t, s, t)) ], differentiating through the
/// noise network with its parameters frozen. Rows are independent.
template <ActionCritic Critic>
Tensor guidance_gradient(const DiffusionPolicy& policy, const Critic& critic, const Tensor& states,
                         const Tensor& x_t, int t, double x0_clip_factor = 1.5) {
  return guidance_probe(policy, critic, states, x_t, t, x0_clip_factor).gradient;
}

/// Spherical-shell guided step:
///   r = sqrt(d) sigma, d* = -r g / (|g| + eps),
///   d_m = sigma z + rho (d* - sigma z),  x = mu + r d_m / (|d_m| + eps).
/// Always consumes d normal draws. Returns mu when d_m is exactly zero.
inline std::vector<double> dsg_step(std::span<const double> mu, std::span<const double> grad, double sigma,
                                    double rate, Rng& rng, double stabilizer = 1e-8) {
  if (!(sigma > 0.0)) throw ConfigError("dsg_step requires sigma_t > 0");
  if (mu.size() != grad.size()) throw DimensionError("dsg_step: mean and gradient lengths differ");
  const std::size_t d = mu.size();
  const double radius = std::sqrt(static_cast<double>(d)) * sigma;
  const double gnorm = l2_norm(grad);
  std::vector<double> mixed(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double noise = sigma * rng.normal();
    const double descent = -radius * grad[i] / (gnorm + stabilizer);
    mixed[i] = (1.0 - rate) * noise + rate * descent;
  }
  const double mnorm = l2_norm(mixed);
  std::vector<double> out(mu.begin(), mu.end());
  if (mnorm == 0.0) return out;
  for (std::size_t i = 0; i < d; ++i) out[i] += radius * mixed[i] / (mnorm + stabilizer);
  return out;
}

/// Additive mean shift: x = mu - eta g + sigma z.
inline std::vector<double> naive_guidance_step(std::span<const double> mu, std::span<const double> grad, double sigma,
                                               double eta, Rng& rng) {
  if (!(eta >= 0.0)) throw ConfigError("naive guidance step size must be >= 0");
  if (mu.size() != grad.size()) throw DimensionError("naive_guidance_step: mean and gradient lengths differ");
  std::vector<double> out(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) out[i] = mu[i] - eta * grad[i] + sigma * rng.normal();
  return out;
}

/// Guided reverse chain from x_T ~ N(0, I). Steps t > G (or mode off) are
/// unconditional; steps t <= G apply the configured guidance rule. The final
/// step has sigma_1 = 0 and returns x0_hat(x_1), clipped to the action box.
template <ActionCritic Critic>
Tensor refine_action(const DiffusionPolicy& policy, const Critic& critic, const Tensor& states,
                     const GuidanceConfig& cfg, Rng& rng) {
  const auto& sched = policy.schedule();
  cfg.validate(sched.steps);
  const std::size_t rows = states.rows();
  const std::size_t d = policy.action_dim();
  Tensor x = standard_normal(rows, d, rng);
  for (int t = sched.steps; t >= 1; --t) {
    const double sigma = sched.sigma[static_cast<std::size_t>(t)];
    const bool guided = cfg.mode != GuidanceMode::off && t <= cfg.guided_steps && sigma > 0.0;
    if (!guided) {
      const Tensor x0_hat = predict_x0(x, policy.predict_noise(x, states, t), t, sched);
      x = t == 1 ? x0_hat : unconditional_step(x, x0_hat, t, sched, rng);
    } else {
      const GuidanceProbe probe = guidance_probe(policy, critic, states, x, t, cfg.x0_clip_factor);
      const Tensor mu = reverse_mean(x, probe.x0_hat, t, sched);
      const double eta = cfg.naive_step.value_or(sigma * sigma);
      for (std::size_t r = 0; r < rows; ++r) {
        const auto next = cfg.mode == GuidanceMode::dsg
                              ? dsg_step(mu.row_span(r), probe.gradient.row_span(r), sigma, cfg.rate, rng, cfg.stabilizer)
                              : naive_guidance_step(mu.row_span(r), probe.gradient.row_span(r), sigma, eta, rng);
        std::copy(next.begin(), next.end(), x.row_span(r).begin());
      }
    }
    if (!x.all_finite()) throw NumericError("non-finite refinement at diffusion step " + std::to_string(t), t);
  }
  policy.box().clip(x);
  return x;
}

}  // namespace cgpo
