#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "cgpo/diffusion_policy.hpp"
#include "cgpo/errors.hpp"
#include "cgpo/rng.hpp"
#include "cgpo/tensor.hpp"

namespace cgpo {

struct Transition {
  std::vector<double> state;
  std::vector<double> action;
  double reward = 0.0;
  std::vector<double> next_state;
  bool done = false;  // true terminal only; horizon cuts still bootstrap
};

struct EnvSpec {
  std::string name;
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;
  ActionBox action_box;
  int horizon = 1;
  std::string reward;
};

struct StepResult {
  std::vector<double> next_state;
  double reward = 0.0;
  bool terminal = false;
  bool action_clipped = false;
};

/// 2-D point mass in [-2, 2]^2: p' = clip(p + 0.1 a), r = -|p'|, 50 steps.
class PointMass {
 public:
  static constexpr double kExtent = 2.0;
  static constexpr double kStepSize = 0.1;
  static constexpr int kHorizon = 50;

  PointMass() = default;
  explicit PointMass(std::array<double, 2> fixed_start) : fixed_start_(fixed_start) {}

  static EnvSpec spec() {
    return {"pointmass", 2, 2, ActionBox::symmetric(2, 1.0), kHorizon, "-||p'||_2"};
  }

  std::vector<double> reset(Rng& rng) const {
    if (fixed_start_) return {(*fixed_start_)[0], (*fixed_start_)[1]};
    return {rng.uniform(-kExtent, kExtent), rng.uniform(-kExtent, kExtent)};
  }

  static StepResult step(std::span<const double> state, std::span<const double> action) {
    StepResult out;
    out.next_state.resize(2);
    double norm2 = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
      const double a = std::clamp(action[i], -1.0, 1.0);
      out.action_clipped = out.action_clipped || a != action[i];
      out.next_state[i] = std::clamp(state[i] + kStepSize * a, -kExtent, kExtent);
      norm2 += out.next_state[i] * out.next_state[i];
    }
    out.reward = -std::sqrt(norm2);
    return out;
  }

 private:
  std::optional<std::array<double, 2>> fixed_start_;
};

/// Single-step bandit: s ~ U[-1, 1], reward peaks of height ~1 at a = +-0.5.
class Bandit {
 public:
  static EnvSpec spec() {
    return {"bandit", 1, 1, ActionBox::symmetric(1, 1.0), 1,
            "exp(-(a-0.5)^2/0.02) + exp(-(a+0.5)^2/0.02)"};
  }

  static double reward(double a) {
    return std::exp(-(a - 0.5) * (a - 0.5) / 0.02) + std::exp(-(a + 0.5) * (a + 0.5) / 0.02);
  }

  std::vector<double> reset(Rng& rng) const { return {rng.uniform(-1.0, 1.0)}; }

  static StepResult step(std::span<const double> state, std::span<const double> action) {
    StepResult out;
    const double a = std::clamp(action[0], -1.0, 1.0);
    out.action_clipped = a != action[0];
    out.next_state.assign(state.begin(), state.end());
    out.reward = reward(a);
    out.terminal = true;
    return out;
  }
};

/// Value-type wrapper selecting an environment by name.
class Environment {
 public:
  explicit Environment(PointMass env) : env_(env) {}
  explicit Environment(Bandit env) : env_(env) {}

  static Environment make(const std::string& name) {
    if (name == "pointmass") return Environment(PointMass{});
    if (name == "bandit") return Environment(Bandit{});
    throw ConfigError("unknown environment '" + name + "' (expected pointmass | bandit)");
  }

  EnvSpec spec() const {
    return std::visit([](const auto& e) { return std::decay_t<decltype(e)>::spec(); }, env_);
  }

  std::vector<double> reset(Rng& rng) const {
    return std::visit([&](const auto& e) { return e.reset(rng); }, env_);
  }

  /// Pure in (state, action); out-of-box actions are clipped and counted.
  StepResult step(std::span<const double> state, std::span<const double> action) {
    StepResult out = std::visit([&](const auto& e) { return e.step(state, action); }, env_);
    if (out.action_clipped) ++clipped_actions_;
    return out;
  }

  long clipped_actions() const { return clipped_actions_; }

 private:
  std::variant<PointMass, Bandit> env_;
  long clipped_actions_ = 0;
};

struct TransitionBatch {
  Tensor states;
  Tensor actions;
  std::vector<double> rewards;
  Tensor next_states;
  std::vector<double> dones;
  std::vector<std::size_t> indices;
};

/// Fixed-capacity ring buffer; the oldest transition is overwritten first.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ConfigError("replay buffer capacity must be positive");
    storage_.reserve(std::min<std::size_t>(capacity, 1 << 16));
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return storage_.size(); }

  void push(Transition tr) {
    if (storage_.size() < capacity_) {
      storage_.push_back(std::move(tr));
    } else {
      storage_[cursor_] = std::move(tr);
    }
    cursor_ = (cursor_ + 1) % capacity_;
  }

  const Transition& at(std::size_t i) const { return storage_.at(i); }

  /// Uniform sampling with replacement.
  TransitionBatch sample(std::size_t batch_size, Rng& rng) const {
    if (storage_.empty()) throw StateError("cannot sample from an empty replay buffer");
    if (storage_.size() < batch_size) throw StateError("replay buffer holds fewer transitions than the batch size");
    std::vector<std::size_t> idx(batch_size);
    for (auto& i : idx) i = rng.index(storage_.size());
    return gather(idx);
  }

  TransitionBatch gather(std::span<const std::size_t> idx) const {
    const auto& first = storage_.at(idx.front());
    const std::size_t ds = first.state.size();
    const std::size_t da = first.action.size();
    TransitionBatch b{Tensor::matrix(idx.size(), ds), Tensor::matrix(idx.size(), da), std::vector<double>(idx.size()),
                      Tensor::matrix(idx.size(), ds), std::vector<double>(idx.size()),
                      std::vector<std::size_t>(idx.begin(), idx.end())};
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const Transition& tr = storage_.at(idx[i]);
      std::copy(tr.state.begin(), tr.state.end(), b.states.row_span(i).begin());
      std::copy(tr.action.begin(), tr.action.end(), b.actions.row_span(i).begin());
      std::copy(tr.next_state.begin(), tr.next_state.end(), b.next_states.row_span(i).begin());
      b.rewards[i] = tr.reward;
      b.dones[i] = tr.done ? 1.0 : 0.0;
    }
    return b;
  }

 private:
  std::size_t capacity_;
  std::size_t cursor_ = 0;
  std::vector<Transition> storage_;
};

}  // namespace cgpo
