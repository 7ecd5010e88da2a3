#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "cgpo/concepts.hpp"
#include "cgpo/diffusion_policy.hpp"
#include "cgpo/errors.hpp"
#include "cgpo/guidance.hpp"
#include "cgpo/rng.hpp"
#include "cgpo/tensor.hpp"

namespace cgpo {

/// Critic values of K unguided candidates per state, laid out {rows, K}.
template <ActionCritic Critic, ActionSampler Policy>
Tensor candidate_values(const Critic& critic, const Policy& policy, const Tensor& states, std::size_t k, Rng& rng) {
  if (k < 1) throw ConfigError("candidate count K must be >= 1");
  const Tensor repeated = repeat_rows(states, k);
  const Tensor actions = policy.sample(repeated, rng);
  return Tensor::matrix(states.rows(), k, critic.evaluate(repeated, actions));
}

/// max_i Q(s, a_i) - mean_i Q(s, a_i) over K unguided candidates, per state.
template <ActionCritic Critic, ActionSampler Policy>
std::vector<double> delta_q(const Critic& critic, const Policy& policy, const Tensor& states, std::size_t k, Rng& rng) {
  if (k < 2) throw ConfigError("critic contrast needs K >= 2 candidates");
  const Tensor q = candidate_values(critic, policy, states, k, rng);
  std::vector<double> out(states.rows());
  for (std::size_t r = 0; r < out.size(); ++r) {
    const auto row = q.row_span(r);
    double sum = 0.0;
    for (double v : row) sum += v;
    out[r] = *std::max_element(row.begin(), row.end()) - sum / static_cast<double>(k);
  }
  return out;
}

/// Q(s, a_g) - mean_i Q(s, a_i): one refined target against K unguided draws.
template <ActionCritic Critic>
std::vector<double> guided_gap(const Critic& critic, const DiffusionPolicy& policy, const GuidanceConfig& guidance,
                               const Tensor& states, std::size_t k, Rng& rng) {
  const Tensor guided = refine_action(policy, critic, states, guidance, rng);
  const auto q_guided = critic.evaluate(states, guided);
  const Tensor q = candidate_values(critic, policy, states, k, rng);
  std::vector<double> out(states.rows());
  for (std::size_t r = 0; r < out.size(); ++r) {
    double sum = 0.0;
    for (double v : q.row_span(r)) sum += v;
    out[r] = q_guided[r] - sum / static_cast<double>(k);
  }
  return out;
}

struct ContrastStats {
  double delta_q = 0.0;
  double guided_gap = 0.0;
};

/// Batch means of both contrasts. The K candidates are drawn once and shared:
/// Delta_Q uses their max, the guided gap compares a_g against their mean.
template <ActionCritic Critic>
ContrastStats contrast_stats(const Critic& critic, const DiffusionPolicy& policy, const GuidanceConfig& guidance,
                             const Tensor& states, std::size_t k, Rng& rng) {
  if (k < 2) throw ConfigError("critic contrast needs K >= 2 candidates");
  if (states.rows() == 0) throw DimensionError("contrast statistics need at least one state");
  const Tensor q = candidate_values(critic, policy, states, k, rng);
  const Tensor guided = refine_action(policy, critic, states, guidance, rng);
  const auto q_guided = critic.evaluate(states, guided);
  ContrastStats out;
  for (std::size_t r = 0; r < states.rows(); ++r) {
    const auto row = q.row_span(r);
    double sum = 0.0;
    for (double v : row) sum += v;
    const double mean = sum / static_cast<double>(k);
    out.delta_q += *std::max_element(row.begin(), row.end()) - mean;
    out.guided_gap += q_guided[r] - mean;
  }
  out.delta_q /= static_cast<double>(states.rows());
  out.guided_gap /= static_cast<double>(states.rows());
  return out;
}

}  // namespace cgpo
