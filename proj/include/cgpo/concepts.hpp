#pragma once

#include <concepts>
#include <vector>

#include "cgpo/autodiff.hpp"
#include "cgpo/rng.hpp"
#include "cgpo/tensor.hpp"

namespace cgpo {

/// A scalar action-value estimate Q(s, a) over batches of rows.
/// The taped overload must be differentiable in the actions.
template <class C>
concept ActionCritic = requires(const C& critic, const Tensor& states, const Tensor& actions, Var taped) {
  { critic.evaluate(states, actions) } -> std::convertible_to<std::vector<double>>;
  { critic.evaluate(states, taped) } -> std::same_as<Var>;
};

/// Draws one action per state row.
template <class P>
concept ActionSampler = requires(const P& policy, const Tensor& states, Rng& rng) {
  { policy.sample(states, rng) } -> std::same_as<Tensor>;
};

}  // namespace cgpo
