#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cgpo/autodiff.hpp"
#include "cgpo/errors.hpp"
#include "cgpo/mlp.hpp"
#include "cgpo/rng.hpp"
#include "cgpo/schedule.hpp"
#include "cgpo/tensor.hpp"

namespace cgpo {

/// Per-dimension action bounds.
struct ActionBox {
  std::vector<double> low;
  std::vector<double> high;

  ActionBox() = default;
  ActionBox(std::vector<double> lo, std::vector<double> hi) : low(std::move(lo)), high(std::move(hi)) {
    if (low.size() != high.size() || low.empty()) throw ConfigError("action bounds must be non-empty and matched");
    for (std::size_t i = 0; i < low.size(); ++i) {
      if (!(std::isfinite(low[i]) && std::isfinite(high[i]) && low[i] < high[i])) {
        throw ConfigError("action bounds must be finite with low < high");
      }
    }
  }
  static ActionBox symmetric(std::size_t dim, double bound) {
    return {std::vector<double>(dim, -bound), std::vector<double>(dim, bound)};
  }

  std::size_t dim() const { return low.size(); }

  /// Same center, half-widths scaled by `factor`.
  ActionBox widened(double factor) const {
    ActionBox out = *this;
    for (std::size_t i = 0; i < dim(); ++i) {
      const double c = 0.5 * (low[i] + high[i]);
      const double h = 0.5 * (high[i] - low[i]) * factor;
      out.low[i] = c - h;
      out.high[i] = c + h;
    }
    return out;
  }

  bool contains(std::span<const double> a) const {
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i] < low[i] || a[i] > high[i]) return false;
    }
    return true;
  }

  void clip(Tensor& actions) const {
    for (std::size_t r = 0; r < actions.rows(); ++r) {
      auto row = actions.row_span(r);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] = std::clamp(row[c], low[c], high[c]);
    }
  }

  Tensor uniform(std::size_t rows, Rng& rng) const {
    Tensor out = Tensor::matrix(rows, dim());
    for (std::size_t r = 0; r < rows; ++r) {
      auto row = out.row_span(r);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] = rng.uniform(low[c], high[c]);
    }
    return out;
  }
};

inline constexpr std::size_t kTimeEmbeddingDim = 16;

/// Sinusoidal step features: sin/cos pairs at geometrically spaced frequencies.
inline std::vector<double> time_embedding(int t) {
  constexpr std::size_t half = kTimeEmbeddingDim / 2;
  std::vector<double> out(kTimeEmbeddingDim);
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    out[2 * i] = std::sin(static_cast<double>(t) * freq);
    out[2 * i + 1] = std::cos(static_cast<double>(t) * freq);
  }
  return out;
}

/// State-conditioned DDPM over actions. The noise network sees
/// [x_t | s | embedding(t)] and predicts the injected noise.
class DiffusionPolicy {
 public:
  DiffusionPolicy() = default;

  DiffusionPolicy(std::size_t state_dim, ActionBox box, DiffusionSchedule schedule, Mlp eps_net)
      : state_dim_(state_dim), box_(std::move(box)), schedule_(std::move(schedule)), eps_net_(std::move(eps_net)) {
    if (eps_net_.input_dim() != input_dim()) {
      throw DimensionError("noise network input width must be action_dim + state_dim + " +
                           std::to_string(kTimeEmbeddingDim));
    }
    if (eps_net_.output_dim() != action_dim()) {
      throw DimensionError("noise network output width must equal the action dimension");
    }
    build_embeddings();
  }

  DiffusionPolicy(std::size_t state_dim, ActionBox box, DiffusionSchedule schedule,
                  const std::vector<std::size_t>& hidden, Activation activation, Rng& rng)
      : DiffusionPolicy(state_dim, box, schedule, make_net(state_dim, box.dim(), hidden, activation, rng)) {}

  std::size_t state_dim() const { return state_dim_; }
  std::size_t action_dim() const { return box_.dim(); }
  std::size_t input_dim() const { return action_dim() + state_dim_ + kTimeEmbeddingDim; }
  const ActionBox& box() const { return box_; }
  const DiffusionSchedule& schedule() const { return schedule_; }
  Mlp& eps_net() { return eps_net_; }
  const Mlp& eps_net() const { return eps_net_; }

  /// Noise prediction for a batch sharing the step t.
  Tensor predict_noise(const Tensor& x_t, const Tensor& states, int t) const {
    return eps_net_.forward(conditioning(x_t, states, t));
  }

  /// Taped noise prediction with one step per row. `x_t` may carry gradients.
  Var predict_noise(std::span<const Var> params, Var x_t, const Tensor& states, std::span<const int> steps) const {
    Tape& tape = *x_t.tape;
    Tensor cond = context(states, steps);
    Var input = ad::concat_cols(x_t, tape.constant(std::move(cond)));
    return eps_net_.forward(params, input);
  }

  Var predict_noise(std::span<const Var> params, Var x_t, const Tensor& states, int t) const {
    std::vector<int> steps(states.rows(), t);
    return predict_noise(params, x_t, states, steps);
  }

  /// [s | embedding(t_r)] per row.
  Tensor context(const Tensor& states, std::span<const int> steps) const {
    check_states(states);
    if (steps.size() != states.rows()) throw DimensionError("one diffusion step per state row required");
    Tensor out = Tensor::matrix(states.rows(), state_dim_ + kTimeEmbeddingDim);
    for (std::size_t r = 0; r < states.rows(); ++r) {
      schedule_.check_step(steps[r]);
      auto row = out.row_span(r);
      std::copy_n(states.row_span(r).begin(), state_dim_, row.begin());
      const auto& emb = embeddings_[static_cast<std::size_t>(steps[r])];
      std::copy(emb.begin(), emb.end(), row.begin() + static_cast<std::ptrdiff_t>(state_dim_));
    }
    return out;
  }

  /// Unguided ancestral sample for each state row; see sample_unguided.
  Tensor sample(const Tensor& states, Rng& rng) const;

 private:
  static Mlp make_net(std::size_t state_dim, std::size_t action_dim, const std::vector<std::size_t>& hidden,
                      Activation activation, Rng& rng) {
    std::vector<std::size_t> dims{action_dim + state_dim + kTimeEmbeddingDim};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(action_dim);
    return Mlp(dims, activation, rng);
  }

  void build_embeddings() {
    embeddings_.assign(static_cast<std::size_t>(schedule_.steps) + 1, {});
    for (int t = 1; t <= schedule_.steps; ++t) embeddings_[static_cast<std::size_t>(t)] = time_embedding(t);
  }

  void check_states(const Tensor& states) const {
    if (states.cols() != state_dim_) {
      throw DimensionError("expected state width " + std::to_string(state_dim_) + ", got " +
                           shape_string(states.shape()));
    }
  }

  Tensor conditioning(const Tensor& x_t, const Tensor& states, int t) const {
    if (x_t.rows() != states.rows() || x_t.cols() != action_dim()) {
      throw DimensionError("x_t " + shape_string(x_t.shape()) + " does not match states " +
                           shape_string(states.shape()));
    }
    std::vector<int> steps(states.rows(), t);
    return concat_cols(x_t, context(states, steps));
  }

  std::size_t state_dim_ = 0;
  ActionBox box_;
  DiffusionSchedule schedule_;
  Mlp eps_net_;
  std::vector<std::vector<double>> embeddings_;
};

inline Tensor standard_normal(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor out = Tensor::matrix(rows, cols);
  for (double& v : out.values()) v = rng.normal();
  return out;
}

/// One unconditional reverse step from x_t given the clean estimate.
/// Returns mu + sigma_t * eps (mu alone when sigma_t = 0).
inline Tensor unconditional_step(const Tensor& x_t, const Tensor& x0_hat, int t, const DiffusionSchedule& sched,
                                 Rng& rng) {
  Tensor next = reverse_mean(x_t, x0_hat, t, sched);
  const double sigma = sched.sigma[static_cast<std::size_t>(t)];
  if (sigma > 0.0) {
    for (double& v : next.values()) v += sigma * rng.normal();
  }
  return next;
}

/// Ancestral sampling x_T ~ N(0, I) -> x_0 for every state row; the result is
/// clipped to the action box. Random draws are consumed row-major per step.
/// The last step (sigma_1 = 0) returns x0_hat(x_1) itself.
inline Tensor sample_unguided(const DiffusionPolicy& policy, const Tensor& states, Rng& rng) {
  const auto& sched = policy.schedule();
  Tensor x = standard_normal(states.rows(), policy.action_dim(), rng);
  for (int t = sched.steps; t >= 1; --t) {
    const Tensor eps = policy.predict_noise(x, states, t);
    const Tensor x0_hat = predict_x0(x, eps, t, sched);
    x = t == 1 ? x0_hat : unconditional_step(x, x0_hat, t, sched, rng);
    if (!x.all_finite()) throw NumericError("non-finite sample at diffusion step " + std::to_string(t), t);
  }
  policy.box().clip(x);
  return x;
}

inline std::vector<double> sample_unguided(const DiffusionPolicy& policy, std::span<const double> state, Rng& rng) {
  Tensor a = sample_unguided(policy, Tensor::row(state), rng);
  return a.storage();
}

inline Tensor DiffusionPolicy::sample(const Tensor& states, Rng& rng) const {
  return sample_unguided(*this, states, rng);
}

/// Draws t_r ~ U{1..T} then eps_r ~ N(0, I) per row, in row order, and returns
/// mean_r weights[r] * ||eps_r - eps_theta(x_t_r, s_r, t_r)||^2 on the tape of
/// `params`. Shared by the plain and the weighted denoising objectives.
inline Var weighted_denoise_loss(const DiffusionPolicy& policy, std::span<const Var> params, const Tensor& states,
                                 const Tensor& x0, std::span<const double> weights, Rng& rng) {
  if (params.empty()) throw ContractError("noise network parameters must be bound to a tape");
  if (x0.rows() != states.rows() || x0.cols() != policy.action_dim()) {
    throw DimensionError("denoising batch: actions " + shape_string(x0.shape()) + " vs states " +
                         shape_string(states.shape()));
  }
  if (weights.size() != states.rows()) throw DimensionError("denoising batch: one weight per row required");
  Tape& tape = *params.front().tape;
  const auto& sched = policy.schedule();
  const std::size_t rows = states.rows();
  const std::size_t d = policy.action_dim();

  // Every row consumes its draws; rows with zero weight contribute exactly
  // zero and are left out of the network pass.
  std::vector<std::size_t> active;
  std::vector<int> all_steps(rows);
  Tensor all_noise = Tensor::matrix(rows, d);
  for (std::size_t r = 0; r < rows; ++r) {
    all_steps[r] = static_cast<int>(rng.uniform_int(1, sched.steps));
    for (std::size_t c = 0; c < d; ++c) all_noise(r, c) = rng.normal();
    if (weights[r] != 0.0) active.push_back(r);
  }
  if (active.empty()) return tape.constant(Tensor::scalar(0.0));

  const std::size_t n = active.size();
  std::vector<int> steps(n);
  std::vector<double> w(n);
  Tensor noise = Tensor::matrix(n, d);
  Tensor x_t = Tensor::matrix(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = active[i];
    steps[i] = all_steps[r];
    w[i] = weights[r];
    const double a = sched.sqrt_alpha_bar(steps[i]);
    const double b = sched.sqrt_one_minus_alpha_bar(steps[i]);
    for (std::size_t c = 0; c < d; ++c) {
      noise(i, c) = all_noise(r, c);
      x_t(i, c) = a * x0(r, c) + b * noise(i, c);
    }
  }
  const Tensor active_states = n == rows ? states : select_rows(states, active);
  Var pred = policy.predict_noise(params, tape.constant(std::move(x_t)), active_states, steps);
  Var err = ad::sub(tape.constant(std::move(noise)), pred);
  Var per_row = ad::row_sum(ad::square(err));
  Var weighted = ad::scale_rows(per_row, std::move(w));
  return ad::scale(ad::sum(weighted), 1.0 / static_cast<double>(rows));
}

/// Unweighted noise-regression objective, averaged over the batch.
inline Var base_denoise_loss(const DiffusionPolicy& policy, std::span<const Var> params, const Tensor& states,
                             const Tensor& x0, Rng& rng) {
  std::vector<double> ones(states.rows(), 1.0);
  return weighted_denoise_loss(policy, params, states, x0, ones, rng);
}

}  // namespace cgpo
