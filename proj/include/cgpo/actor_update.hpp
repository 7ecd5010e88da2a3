#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "cgpo/adam.hpp"
#include "cgpo/autodiff.hpp"
#include "cgpo/concepts.hpp"
#include "cgpo/diffusion_policy.hpp"
#include "cgpo/errors.hpp"
#include "cgpo/mlp.hpp"
#include "cgpo/rng.hpp"
#include "cgpo/tensor.hpp"

namespace cgpo {

/// State-value network V(s) that tracks the critic value of unguided samples.
struct ValueNet {
  Mlp net;
  AdamState optimizer;
  double lr = 3e-4;

  ValueNet() = default;
  ValueNet(std::size_t state_dim, const std::vector<std::size_t>& hidden, Activation activation, double learning_rate,
           Rng& rng)
      : lr(learning_rate) {
    std::vector<std::size_t> dims{state_dim};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(1);
    net = Mlp(dims, activation, rng);
  }
  explicit ValueNet(Mlp m, double learning_rate = 3e-4) : net(std::move(m)), lr(learning_rate) {
    if (net.output_dim() != 1) throw DimensionError("value network must output one scalar per state");
  }

  std::vector<double> evaluate(const Tensor& states) const { return net.forward(states).storage(); }
};

struct ActorLossConfig {
  double entropy_weight = 0.02;  // lambda_ent
  double entropy_coef = 1.0;     // alpha_ent
  std::size_t uniform_samples = 10;  // N_e
  double lr = 3e-4;

  void validate() const {
    if (!(entropy_weight >= 0.0)) throw ConfigError("entropy weight must be >= 0");
    if (!(entropy_coef >= 0.0)) throw ConfigError("entropy coefficient must be >= 0");
    if (uniform_samples < 1) throw ConfigError("uniform sample count N_e must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("actor learning rate must be positive");
  }
};

/// w(s) = max(Q(s, a_g) - V(s), 0); with no value network, max(Q(s, a_g), 0).
/// Plain numbers: nothing here is recorded for differentiation.
template <ActionCritic Critic>
std::vector<double> rectified_weight(const Critic& critic, const ValueNet* value, const Tensor& states,
                                     const Tensor& guided_actions) {
  std::vector<double> w = critic.evaluate(states, guided_actions);
  if (value != nullptr) {
    const auto v = value->evaluate(states);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= v[i];
  }
  for (double& x : w) x = std::max(x, 0.0);
  return w;
}

/// y_V(s) = Q(s, a~) for one unguided sample a~ per state. Returned as plain
/// numbers, so no gradient can flow back through it.
template <ActionCritic Critic, ActionSampler Policy>
std::vector<double> value_target(const Critic& critic, const Policy& policy, const Tensor& states, Rng& rng) {
  const Tensor actions = policy.sample(states, rng);
  return critic.evaluate(states, actions);
}

/// One Adam step on mean (V(s) - y)^2. Returns the pre-update loss.
inline double value_update(ValueNet& value, const Tensor& states, std::span<const double> targets) {
  if (targets.size() != states.rows()) throw DimensionError("value_update: one target per state required");
  Tape tape;
  auto params = value.net.bind(tape, true);
  Var v = value.net.forward(params, tape.constant(states));
  Tensor y = Tensor::matrix(states.rows(), 1, std::vector<double>(targets.begin(), targets.end()));
  Var loss = ad::mean(ad::square(ad::sub(v, tape.constant(std::move(y)))));
  const double out = tape.value(loss).item();
  if (!std::isfinite(out)) throw NumericError("value_update: non-finite loss");
  tape.backward(loss);
  adam_step(value.net, tape.grads(params), value.optimizer, value.lr);
  return out;
}

/// Batch mean of w(s) ||eps - eps_theta(x_t^g, s, t)||^2 with x_t^g noised
/// from the guided target.
inline Var weighted_diffusion_loss(const DiffusionPolicy& policy, std::span<const Var> params, const Tensor& states,
                                   const Tensor& guided_actions, std::span<const double> weights, Rng& rng) {
  for (double w : weights) {
    if (!(w >= 0.0)) throw ContractError("diffusion loss weights must be non-negative");
  }
  return weighted_denoise_loss(policy, params, states, guided_actions, weights, rng);
}

/// Entropy regularizer: N_e uniform actions per state, each noised and
/// regressed with weight lambda_ent * w(s); mean over states and draws.
inline Var entropy_loss(const DiffusionPolicy& policy, std::span<const Var> params, const Tensor& states,
                        std::span<const double> weights, const ActorLossConfig& cfg, Rng& rng) {
  cfg.validate();
  if (weights.size() != states.rows()) throw DimensionError("entropy_loss: one weight per state required");
  const std::size_t draws = cfg.uniform_samples;
  const Tensor expanded_states = repeat_rows(states, draws);
  const Tensor actions = policy.box().uniform(expanded_states.rows(), rng);
  std::vector<double> w(expanded_states.rows());
  for (std::size_t i = 0; i < states.rows(); ++i) {
    for (std::size_t j = 0; j < draws; ++j) w[i * draws + j] = cfg.entropy_weight * weights[i];
  }
  return weighted_denoise_loss(policy, params, expanded_states, actions, w, rng);
}

struct ActorStepResult {
  double diffusion_loss = 0.0;
  double entropy_loss = 0.0;
  double total_loss = 0.0;
};

/// theta <- Adam(theta, grad(L_diff + alpha_ent L_ent)) for losses recorded on
/// the tape of `params`.
inline ActorStepResult actor_step(DiffusionPolicy& policy, AdamState& optimizer, std::span<const Var> params,
                                  Var diffusion, Var entropy, double entropy_coef, double lr) {
  Tape& tape = *params.front().tape;
  Var total = ad::lincomb(diffusion, 1.0, entropy, entropy_coef);
  ActorStepResult out{tape.value(diffusion).item(), tape.value(entropy).item(), tape.value(total).item()};
  if (!std::isfinite(out.total_loss)) throw NumericError("actor_step: non-finite actor loss");
  tape.backward(total);
  adam_step(policy.eps_net(), tape.grads(params), optimizer, lr);
  return out;
}

/// Full actor update on guided targets with weights w(s).
inline ActorStepResult actor_update(DiffusionPolicy& policy, AdamState& optimizer, const Tensor& states,
                                    const Tensor& guided_actions, std::span<const double> weights,
                                    const ActorLossConfig& cfg, Rng& rng) {
  cfg.validate();
  Tape tape;
  auto params = policy.eps_net().bind(tape, true);
  Var diffusion = weighted_diffusion_loss(policy, params, states, guided_actions, weights, rng);
  Var entropy = entropy_loss(policy, params, states, weights, cfg, rng);
  return actor_step(policy, optimizer, params, diffusion, entropy, cfg.entropy_coef, cfg.lr);
}

}  // namespace cgpo
