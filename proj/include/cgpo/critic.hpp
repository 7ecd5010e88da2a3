#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cgpo/adam.hpp"
#include "cgpo/autodiff.hpp"
#include "cgpo/concepts.hpp"
#include "cgpo/errors.hpp"
#include "cgpo/mlp.hpp"
#include "cgpo/rng.hpp"
#include "cgpo/tensor.hpp"

namespace cgpo {

struct CriticConfig {
  std::size_t ensemble_size = 2;   // N
  std::size_t quantiles = 25;      // M
  std::size_t truncation = 2;      // k, top quantiles dropped per member
  double gamma = 0.99;
  double tau = 0.005;
  double lr = 3e-4;
  double huber_kappa = 1.0;
  std::vector<std::size_t> hidden{64, 64};
  Activation activation = Activation::mish;

  void validate() const {
    if (ensemble_size == 0) throw ConfigError("critic ensemble size must be >= 1");
    if (quantiles == 0) throw ConfigError("critic quantile count must be >= 1");
    if (truncation >= quantiles) throw ConfigError("truncation k must be < quantile count M");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("discount must lie in [0, 1]");
    if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("polyak rate must lie in [0, 1]");
    if (!(lr > 0.0)) throw ConfigError("critic learning rate must be positive");
  }
};

/// Sort each row of an {N, M} quantile table ascending, drop the top k,
/// average the rest, then average over members.
inline double aggregate_truncated(const Tensor& quantiles, std::size_t k) {
  const std::size_t m = quantiles.cols();
  if (k >= m) throw ConfigError("truncation k must be < quantile count M");
  const std::size_t keep = m - k;
  double total = 0.0;
  std::vector<double> row;
  for (std::size_t n = 0; n < quantiles.rows(); ++n) {
    auto src = quantiles.row_span(n);
    row.assign(src.begin(), src.end());
    std::stable_sort(row.begin(), row.end());
    double s = 0.0;
    for (std::size_t j = 0; j < keep; ++j) s += row[j];
    total += s / static_cast<double>(keep);
  }
  return total / static_cast<double>(quantiles.rows());
}

/// Ensemble of quantile networks (s, a) -> M quantiles, with Polyak targets.
class CriticEnsemble {
 public:
  CriticEnsemble() = default;

  CriticEnsemble(std::size_t state_dim, std::size_t action_dim, CriticConfig config, Rng& rng)
      : config_(std::move(config)), state_dim_(state_dim), action_dim_(action_dim) {
    config_.validate();
    std::vector<std::size_t> dims{state_dim + action_dim};
    dims.insert(dims.end(), config_.hidden.begin(), config_.hidden.end());
    dims.push_back(config_.quantiles);
    for (std::size_t n = 0; n < config_.ensemble_size; ++n) nets_.emplace_back(dims, config_.activation, rng);
    targets_ = nets_;
    optimizers_.resize(nets_.size());
  }

  /// Builds an ensemble around explicit networks; targets start as copies.
  CriticEnsemble(std::size_t state_dim, std::size_t action_dim, CriticConfig config, std::vector<Mlp> nets)
      : config_(std::move(config)), state_dim_(state_dim), action_dim_(action_dim), nets_(std::move(nets)) {
    config_.ensemble_size = nets_.size();
    if (!nets_.empty()) config_.quantiles = nets_.front().output_dim();
    config_.validate();
    for (const auto& net : nets_) {
      if (net.input_dim() != state_dim + action_dim || net.output_dim() != config_.quantiles) {
        throw DimensionError("critic networks must map state+action to M quantiles");
      }
    }
    targets_ = nets_;
    optimizers_.resize(nets_.size());
  }

  const CriticConfig& config() const { return config_; }
  std::size_t state_dim() const { return state_dim_; }
  std::size_t action_dim() const { return action_dim_; }
  std::size_t truncation() const { return config_.truncation; }
  void set_truncation(std::size_t k) {
    if (k >= config_.quantiles) throw ConfigError("truncation k must be < quantile count M");
    config_.truncation = k;
  }

  std::vector<Mlp>& nets() { return nets_; }
  const std::vector<Mlp>& nets() const { return nets_; }
  std::vector<Mlp>& target_nets() { return targets_; }
  const std::vector<Mlp>& target_nets() const { return targets_; }
  std::vector<AdamState>& optimizers() { return optimizers_; }

  /// Per-member quantile outputs, each {B, M}.
  std::vector<Tensor> quantiles(const Tensor& states, const Tensor& actions, bool use_target = false) const {
    const Tensor input = joint_input(states, actions);
    std::vector<Tensor> out;
    for (const auto& net : (use_target ? targets_ : nets_)) out.push_back(net.forward(input));
    return out;
  }

  /// Truncated-quantile Q for each row.
  std::vector<double> evaluate(const Tensor& states, const Tensor& actions, bool use_target = false) const {
    const auto per_member = quantiles(states, actions, use_target);
    const std::size_t rows = states.rows();
    const std::size_t m = config_.quantiles;
    std::vector<double> out(rows);
    Tensor table = Tensor::matrix(per_member.size(), m);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t n = 0; n < per_member.size(); ++n) {
        auto src = per_member[n].row_span(r);
        std::copy(src.begin(), src.end(), table.row_span(n).begin());
      }
      out[r] = aggregate_truncated(table, config_.truncation);
    }
    return out;
  }

  /// Taped Q over online networks with frozen parameters; {B, 1}.
  Var evaluate(const Tensor& states, Var actions) const { return evaluate(states, actions, false); }

  Var evaluate(const Tensor& states, Var actions, bool use_target) const {
    Tape& tape = *actions.tape;
    if (states.cols() != state_dim_) throw DimensionError("critic state width mismatch");
    Var input = ad::concat_cols(tape.constant(states), actions);
    const auto& members = use_target ? targets_ : nets_;
    Var total{};
    for (std::size_t n = 0; n < members.size(); ++n) {
      auto params = members[n].bind(tape, false);
      Var q = ad::truncated_mean_rows(members[n].forward(params, input), config_.truncation);
      total = n == 0 ? q : ad::add(total, q);
    }
    return ad::scale(total, 1.0 / static_cast<double>(members.size()));
  }

  Tensor joint_input(const Tensor& states, const Tensor& actions) const {
    if (states.cols() != state_dim_ || actions.cols() != action_dim_ || states.rows() != actions.rows()) {
      throw DimensionError("critic input: states " + shape_string(states.shape()) + ", actions " +
                           shape_string(actions.shape()));
    }
    return concat_cols(states, actions);
  }

 private:
  CriticConfig config_;
  std::size_t state_dim_ = 0;
  std::size_t action_dim_ = 0;
  std::vector<Mlp> nets_;
  std::vector<Mlp> targets_;
  std::vector<AdamState> optimizers_;
};

inline double q_value(const CriticEnsemble& ens, std::span<const double> state, std::span<const double> action,
                      bool use_target = false) {
  return ens.evaluate(Tensor::row(state), Tensor::row(action), use_target).front();
}

/// Index of the largest value in each consecutive group of `group` entries.
/// Ties go to the lowest index.
inline std::vector<std::size_t> argmax_groups(std::span<const double> values, std::size_t group) {
  std::vector<std::size_t> out(values.size() / group);
  for (std::size_t g = 0; g < out.size(); ++g) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < group; ++k) {
      if (values[g * group + k] > values[g * group + best]) best = k;
    }
    out[g] = best;
  }
  return out;
}

/// Bellman targets y = r + gamma (1 - done) Q_target(s', a*).
///
/// a* is the best of `candidates` policy samples at s'. With `decoupled` the
/// online networks select and the target networks evaluate; otherwise the
/// target networks do both. Terminal rows draw no samples.
template <ActionSampler Policy>
std::vector<double> ddqn_target(const CriticEnsemble& ens, const Policy& policy, const Tensor& next_states,
                                std::span<const double> rewards, std::span<const double> dones,
                                std::size_t candidates, Rng& rng, bool decoupled = true) {
  if (candidates < 1) throw ConfigError("target selection count K_t must be >= 1");
  const std::size_t rows = next_states.rows();
  if (rewards.size() != rows || dones.size() != rows) throw DimensionError("ddqn_target: batch size mismatch");
  const double gamma = ens.config().gamma;
  std::vector<double> y(rewards.begin(), rewards.end());
  if (gamma == 0.0) return y;

  std::vector<std::size_t> live;
  for (std::size_t r = 0; r < rows; ++r) {
    if (dones[r] == 0.0) live.push_back(r);
  }
  if (live.empty()) return y;

  const Tensor live_states = select_rows(next_states, live);
  const Tensor repeated = repeat_rows(live_states, candidates);
  const Tensor actions = policy.sample(repeated, rng);
  const auto scores = ens.evaluate(repeated, actions, !decoupled);
  const auto best = argmax_groups(scores, candidates);
  std::vector<std::size_t> chosen(live.size());
  for (std::size_t i = 0; i < live.size(); ++i) chosen[i] = i * candidates + best[i];
  const Tensor best_actions = select_rows(actions, chosen);
  const auto q_next = ens.evaluate(live_states, best_actions, true);
  for (std::size_t i = 0; i < live.size(); ++i) {
    const std::size_t r = live[i];
    y[r] = rewards[r] + gamma * (1.0 - dones[r]) * q_next[i];
  }
  return y;
}

/// Quantile-Huber regression of every member's quantiles onto y, one Adam
/// step per member. Returns the mean loss over members.
inline double critic_update(CriticEnsemble& ens, const Tensor& states, const Tensor& actions,
                            std::span<const double> targets, double lr) {
  for (double v : targets) {
    if (!std::isfinite(v)) throw NumericError("critic_update: non-finite Bellman target");
  }
  const Tensor input = ens.joint_input(states, actions);
  double total = 0.0;
  for (std::size_t n = 0; n < ens.nets().size(); ++n) {
    Mlp& net = ens.nets()[n];
    Tape tape;
    auto params = net.bind(tape, true);
    Var q = net.forward(params, tape.constant(input));
    Var loss = ad::quantile_huber_loss(q, std::vector<double>(targets.begin(), targets.end()),
                                       ens.config().huber_kappa);
    const double value = tape.value(loss).item();
    if (!std::isfinite(value)) throw NumericError("critic_update: non-finite loss");
    tape.backward(loss);
    adam_step(net, tape.grads(params), ens.optimizers()[n], lr);
    total += value;
  }
  return total / static_cast<double>(ens.nets().size());
}

/// target <- tau * online + (1 - tau) * target
inline void polyak_update(CriticEnsemble& ens, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("polyak rate must lie in [0, 1]");
  for (std::size_t n = 0; n < ens.nets().size(); ++n) {
    auto online = ens.nets()[n].parameters();
    auto target = ens.target_nets()[n].parameters();
    for (std::size_t p = 0; p < online.size(); ++p) {
      Tensor& dst = *target[p];
      const Tensor& src = *online[p];
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = tau * src[i] + (1.0 - tau) * dst[i];
    }
  }
}

/// Fixed analytic critic Q(s, a) = -||a - a*(s)||^2.
class QuadraticCritic {
 public:
  using Optimum = std::function<std::vector<double>(std::span<const double>)>;

  explicit QuadraticCritic(Optimum optimum) : optimum_(std::move(optimum)) {}

  std::vector<double> optimum(std::span<const double> state) const { return optimum_(state); }

  std::vector<double> evaluate(const Tensor& states, const Tensor& actions) const {
    std::vector<double> out(states.rows());
    for (std::size_t r = 0; r < states.rows(); ++r) {
      const auto target = optimum_(states.row_span(r));
      auto a = actions.row_span(r);
      double s = 0.0;
      for (std::size_t c = 0; c < a.size(); ++c) s += (a[c] - target[c]) * (a[c] - target[c]);
      out[r] = -s;
    }
    return out;
  }

  Var evaluate(const Tensor& states, Var actions) const {
    Tape& tape = *actions.tape;
    const Tensor& av = tape.value(actions);
    Tensor targets(av.shape());
    for (std::size_t r = 0; r < states.rows(); ++r) {
      const auto t = optimum_(states.row_span(r));
      std::copy(t.begin(), t.end(), targets.row_span(r).begin());
    }
    Var diff = ad::sub(actions, tape.constant(std::move(targets)));
    return ad::scale(ad::row_sum(ad::square(diff)), -1.0);
  }

 private:
  Optimum optimum_;
};

}  // namespace cgpo
