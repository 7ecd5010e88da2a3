#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cgpo/actor_update.hpp"
#include "cgpo/adam.hpp"
#include "cgpo/concepts.hpp"
#include "cgpo/contrast.hpp"
#include "cgpo/critic.hpp"
#include "cgpo/diffusion_policy.hpp"
#include "cgpo/envs.hpp"
#include "cgpo/errors.hpp"
#include "cgpo/guidance.hpp"
#include "cgpo/rng.hpp"
#include "cgpo/schedule.hpp"
#include "cgpo/tensor.hpp"

namespace cgpo {

enum class Variant { cgpo, cgpo_naive_guidance, cgpo_unguided, qvpo_sampling };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::cgpo: return "cgpo";
    case Variant::cgpo_naive_guidance: return "cgpo_naive_guidance";
    case Variant::cgpo_unguided: return "cgpo_unguided";
    case Variant::qvpo_sampling: return "qvpo_sampling";
  }
  return "cgpo";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "cgpo") return Variant::cgpo;
  if (s == "cgpo_naive_guidance") return Variant::cgpo_naive_guidance;
  if (s == "cgpo_unguided") return Variant::cgpo_unguided;
  if (s == "qvpo_sampling") return Variant::qvpo_sampling;
  throw ConfigError("unknown variant '" + s +
                    "' (expected cgpo | cgpo_naive_guidance | cgpo_unguided | qvpo_sampling)");
}

/// Guidance rule implied by a variant; qvpo_sampling does not synthesize
/// guided targets and keeps whatever mode is configured for diagnostics.
inline std::optional<GuidanceMode> variant_guidance_mode(Variant v) {
  switch (v) {
    case Variant::cgpo: return GuidanceMode::dsg;
    case Variant::cgpo_naive_guidance: return GuidanceMode::naive;
    case Variant::cgpo_unguided: return GuidanceMode::off;
    case Variant::qvpo_sampling: return std::nullopt;
  }
  return std::nullopt;
}

struct TrainConfig {
  std::string env = "pointmass";
  std::optional<std::uint64_t> seed;
  Variant variant = Variant::cgpo;

  long total_steps = 20000;
  long warmup_steps = 1000;
  int updates_per_step = 1;
  std::size_t batch_size = 256;
  std::size_t buffer_capacity = 100000;
  long eval_interval = 1000;
  int eval_episodes = 20;
  std::size_t behavior_candidates = 4;  // K_b
  std::size_t target_candidates = 4;    // K_t
  std::size_t qvpo_candidates = 4;      // K for best-of-K targets
  bool checkpoint_every_eval = true;

  int diffusion_steps = 20;
  double beta_min = 1e-4;
  double beta_max = 2e-2;
  std::vector<std::size_t> actor_hidden{32, 32};
  Activation actor_activation = Activation::mish;

  CriticConfig critic{2, 25, 2, 0.99, 0.005, 3e-4, 1.0, {32, 32}, Activation::mish};
  GuidanceConfig guidance;
  ActorLossConfig actor;

  std::vector<std::size_t> value_hidden{32, 32};
  Activation value_activation = Activation::mish;
  double value_lr = 3e-4;

  bool use_ddqn = true;
  bool use_truncation = true;
  bool use_valuenet = true;

  std::size_t contrast_candidates = 64;
  std::size_t contrast_states = 256;  // 0 disables the per-row contrast columns

  GuidanceConfig effective_guidance() const {
    GuidanceConfig g = guidance;
    if (auto mode = variant_guidance_mode(variant)) g.mode = *mode;
    return g;
  }

  CriticConfig effective_critic() const {
    CriticConfig c = critic;
    if (!use_truncation) c.truncation = 0;
    return c;
  }

  void validate() const {
    if (!seed) throw ConfigError("seed must be set explicitly");
    (void)Environment::make(env);
    if (total_steps < 1) throw ConfigError("train.total_steps must be >= 1");
    if (warmup_steps < 0) throw ConfigError("train.warmup_steps must be >= 0");
    if (updates_per_step < 0) throw ConfigError("train.updates_per_step must be >= 0");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (buffer_capacity < batch_size) throw ConfigError("train.buffer_capacity must be >= batch size");
    if (eval_interval < 1) throw ConfigError("train.eval_interval must be >= 1");
    if (eval_episodes < 1) throw ConfigError("train.eval_episodes must be >= 1");
    if (behavior_candidates < 1) throw ConfigError("train.behavior_candidates (K_b) must be >= 1");
    if (target_candidates < 1) throw ConfigError("critic.target_candidates (K_t) must be >= 1");
    if (qvpo_candidates < 1) throw ConfigError("qvpo.candidates must be >= 1");
    if (contrast_candidates < 2) throw ConfigError("analysis.contrast_candidates must be >= 2");
    (void)make_schedule(diffusion_steps, beta_min, beta_max);
    effective_critic().validate();
    guidance.validate(diffusion_steps);
    actor.validate();
    if (!(value_lr > 0.0)) throw ConfigError("value.lr must be positive");
    for (auto w : actor_hidden) {
      if (w == 0) throw ConfigError("diffusion.hidden widths must be positive");
    }
    for (auto w : value_hidden) {
      if (w == 0) throw ConfigError("value.hidden widths must be positive");
    }
  }
};

struct Agent {
  DiffusionPolicy policy;
  AdamState actor_optimizer;
  CriticEnsemble critic;
  ValueNet value;
};

/// Fresh networks for `spec`, initialized in a fixed order: policy, critics, value.
inline Agent make_agent(const TrainConfig& cfg, const EnvSpec& spec, Rng& rng) {
  Agent agent;
  agent.policy = DiffusionPolicy(spec.state_dim, spec.action_box,
                                 make_schedule(cfg.diffusion_steps, cfg.beta_min, cfg.beta_max), cfg.actor_hidden,
                                 cfg.actor_activation, rng);
  agent.critic = CriticEnsemble(spec.state_dim, spec.action_dim, cfg.effective_critic(), rng);
  agent.value = ValueNet(spec.state_dim, cfg.value_hidden, cfg.value_activation, cfg.value_lr, rng);
  return agent;
}

/// Best of K unguided samples per state under the critic. K = 1 is plain
/// sampling and consumes exactly the draws sample_unguided would.
template <ActionCritic Critic>
Tensor best_of_k(const DiffusionPolicy& policy, const Critic& critic, const Tensor& states, std::size_t k, Rng& rng) {
  if (k < 1) throw ConfigError("candidate count K must be >= 1");
  if (k == 1) return sample_unguided(policy, states, rng);
  const Tensor repeated = repeat_rows(states, k);
  const Tensor candidates = sample_unguided(policy, repeated, rng);
  const auto q = critic.evaluate(repeated, candidates);
  const auto best = argmax_groups(q, k);
  std::vector<std::size_t> rows(states.rows());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i * k + best[i];
  return select_rows(candidates, rows);
}

/// Action executed in the environment: argmax of K_b unguided draws.
template <ActionCritic Critic>
Tensor behavior_action(const DiffusionPolicy& policy, const Critic& critic, const Tensor& states, std::size_t k_b,
                       Rng& rng) {
  return best_of_k(policy, critic, states, k_b, rng);
}

/// Candidate-sampling actor update: best-of-K targets weighted by the
/// rectified advantage, regressed with the same losses as guided targets.
template <ActionCritic Critic>
ActorStepResult qvpo_sampling_update(DiffusionPolicy& policy, AdamState& optimizer, const Critic& critic,
                                     const ValueNet* value, const Tensor& states, std::size_t k,
                                     const ActorLossConfig& cfg, Rng& rng) {
  const Tensor targets = best_of_k(policy, critic, states, k, rng);
  const auto w = rectified_weight(critic, value, states, targets);
  return actor_update(policy, optimizer, states, targets, w, cfg, rng);
}

/// Mean undiscounted return of the unguided sampler. Episodes run side by
/// side; each step samples one batch for the episodes still running.
template <ActionSampler Policy>
double eval_policy(const Policy& policy, Environment env, int episodes, Rng& rng) {
  if (episodes < 1) throw ConfigError("evaluation needs at least one episode");
  const EnvSpec spec = env.spec();
  const auto n = static_cast<std::size_t>(episodes);
  std::vector<std::vector<double>> states(n);
  for (auto& s : states) s = env.reset(rng);
  std::vector<double> returns(n, 0.0);
  std::vector<std::size_t> live(n);
  for (std::size_t i = 0; i < n; ++i) live[i] = i;
  for (int t = 0; t < spec.horizon && !live.empty(); ++t) {
    Tensor batch = Tensor::matrix(live.size(), spec.state_dim);
    for (std::size_t j = 0; j < live.size(); ++j) {
      std::copy(states[live[j]].begin(), states[live[j]].end(), batch.row_span(j).begin());
    }
    const Tensor actions = policy.sample(batch, rng);
    std::vector<std::size_t> still;
    for (std::size_t j = 0; j < live.size(); ++j) {
      const std::size_t i = live[j];
      StepResult res = env.step(states[i], actions.row_span(j));
      returns[i] += res.reward;
      states[i] = std::move(res.next_state);
      if (!res.terminal) still.push_back(i);
    }
    live = std::move(still);
  }
  double total = 0.0;
  for (double r : returns) total += r;
  return total / static_cast<double>(n);
}

struct UpdateStats {
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  double value_loss = 0.0;
  double mean_weight = 0.0;
};

/// Target actions for the actor regression: guided refinement for the CGPO
/// family, best-of-K candidates for qvpo_sampling.
inline Tensor synthesize_targets(const Agent& agent, const TrainConfig& cfg, const GuidanceConfig& guidance,
                                 const Tensor& states, Rng& rng) {
  if (cfg.variant == Variant::qvpo_sampling) return best_of_k(agent.policy, agent.critic, states, cfg.qvpo_candidates, rng);
  return refine_action(agent.policy, agent.critic, states, guidance, rng);
}

/// One gradient update on a replay batch: targets and weights from the
/// current snapshot, then value calibration, actor, critic and Polyak steps.
inline UpdateStats update_step(Agent& agent, const TrainConfig& cfg, const GuidanceConfig& guidance,
                               const TransitionBatch& batch, Rng& rng) {
  UpdateStats out;
  const Tensor targets = synthesize_targets(agent, cfg, guidance, batch.states, rng);
  const auto w = rectified_weight(agent.critic, cfg.use_valuenet ? &agent.value : nullptr, batch.states, targets);
  for (double v : w) out.mean_weight += v;
  out.mean_weight /= static_cast<double>(w.size());

  if (cfg.use_valuenet) {
    const auto y_v = value_target(agent.critic, agent.policy, batch.states, rng);
    out.value_loss = value_update(agent.value, batch.states, y_v);
  }

  out.actor_loss = actor_update(agent.policy, agent.actor_optimizer, batch.states, targets, w, cfg.actor, rng).total_loss;

  const auto y = ddqn_target(agent.critic, agent.policy, batch.next_states, batch.rewards, batch.dones,
                             cfg.target_candidates, rng, cfg.use_ddqn);
  out.critic_loss = critic_update(agent.critic, batch.states, batch.actions, y, agent.critic.config().lr);
  polyak_update(agent.critic, agent.critic.config().tau);
  return out;
}

struct MetricsRow {
  long env_step = 0;
  long updates = 0;
  double eval_return = 0.0;
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  double value_loss = 0.0;
  double mean_weight = 0.0;
  double delta_q = std::nan("");
  double guided_gap = std::nan("");
  double wall_seconds = 0.0;
};

struct TrainHooks {
  std::function<void(const MetricsRow&)> on_row;
  /// Called at every eval row when checkpointing is enabled, and once more
  /// with `final == true` after the last step.
  std::function<void(const Agent&, long env_step, const Tensor& probe_states, bool final)> on_checkpoint;
  std::function<void(const std::string&)> on_warning;
};

struct TrainResult {
  std::vector<MetricsRow> rows;
  Agent agent;
  long updates = 0;
  long clipped_actions = 0;
  Tensor final_probe_states;
};

// Stream ids for Rng::derive; eval and contrast streams also take env_step.
enum RngStream : std::uint64_t {
  kInitStream = 1,
  kEnvStream = 2,
  kBehaviorStream = 3,
  kUpdateStream = 4,
  kEvalStream = 5,
  kProbeStream = 6,
  kContrastStream = 7,
};

/// Up to `count` replay states drawn with the probe stream of `env_step`.
inline Tensor probe_states(const ReplayBuffer& buffer, std::uint64_t seed, long env_step, std::size_t count) {
  if (count == 0 || buffer.size() == 0) return Tensor{};
  Rng rng = Rng::derive(seed, {kProbeStream, static_cast<std::uint64_t>(env_step)});
  return buffer.sample(std::min(count, buffer.size()), rng).states;
}

/// Contrast columns for a snapshot, with the stream fixed by (seed, env_step)
/// so a saved checkpoint reproduces them exactly.
inline ContrastStats snapshot_contrast(const Agent& agent, const TrainConfig& cfg, const Tensor& states,
                                       long env_step) {
  Rng rng = Rng::derive(*cfg.seed, {kContrastStream, static_cast<std::uint64_t>(env_step)});
  return contrast_stats(agent.critic, agent.policy, cfg.effective_guidance(), states, cfg.contrast_candidates, rng);
}

inline double snapshot_eval(const Agent& agent, const TrainConfig& cfg, long env_step) {
  Rng rng = Rng::derive(*cfg.seed, {kEvalStream, static_cast<std::uint64_t>(env_step)});
  return eval_policy(agent.policy, Environment::make(cfg.env), cfg.eval_episodes, rng);
}

/// The outer loop: one environment step per iteration (uniform actions
/// during warmup, behavior_action afterwards), then `updates_per_step`
/// updates once warmup is over and the buffer holds a full batch.
/// Evaluation and contrast use their own streams, so they never perturb
/// training.
inline TrainResult train(const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  cfg.validate();
  const std::uint64_t seed = *cfg.seed;
  const GuidanceConfig guidance = cfg.effective_guidance();
  if (cfg.variant == Variant::qvpo_sampling && cfg.qvpo_candidates == 1 && hooks.on_warning) {
    hooks.on_warning("qvpo.candidates = 1: best-of-K targets degenerate to self-distillation");
  }

  Environment env = Environment::make(cfg.env);
  const EnvSpec spec = env.spec();
  Rng init_rng = Rng::derive(seed, {kInitStream});
  Rng env_rng = Rng::derive(seed, {kEnvStream});
  Rng behavior_rng = Rng::derive(seed, {kBehaviorStream});
  Rng update_rng = Rng::derive(seed, {kUpdateStream});

  TrainResult result;
  result.agent = make_agent(cfg, spec, init_rng);
  Agent& agent = result.agent;
  ReplayBuffer buffer(cfg.buffer_capacity);

  std::vector<double> state = env.reset(env_rng);
  int episode_length = 0;
  UpdateStats sums;
  long interval_updates = 0;
  const auto start = std::chrono::steady_clock::now();

  for (long step = 1; step <= cfg.total_steps; ++step) {
    try {
      std::vector<double> action;
      if (step <= cfg.warmup_steps) {
        action = spec.action_box.uniform(1, env_rng).storage();
      } else {
        action = behavior_action(agent.policy, agent.critic, Tensor::row(state), cfg.behavior_candidates, behavior_rng)
                     .storage();
      }
      StepResult res = env.step(state, action);
      for (std::size_t i = 0; i < action.size(); ++i) {
        action[i] = std::clamp(action[i], spec.action_box.low[i], spec.action_box.high[i]);
      }
      ++episode_length;
      buffer.push({state, action, res.reward, res.next_state, res.terminal});
      if (res.terminal || episode_length >= spec.horizon) {
        state = env.reset(env_rng);
        episode_length = 0;
      } else {
        state = std::move(res.next_state);
      }

      if (step >= cfg.warmup_steps && buffer.size() >= cfg.batch_size) {
        for (int u = 0; u < cfg.updates_per_step; ++u) {
          const TransitionBatch batch = buffer.sample(cfg.batch_size, update_rng);
          const UpdateStats s = update_step(agent, cfg, guidance, batch, update_rng);
          sums.actor_loss += s.actor_loss;
          sums.critic_loss += s.critic_loss;
          sums.value_loss += s.value_loss;
          sums.mean_weight += s.mean_weight;
          ++interval_updates;
          ++result.updates;
        }
      }

      if (step % cfg.eval_interval == 0 || step == cfg.total_steps) {
        MetricsRow row;
        row.env_step = step;
        row.updates = result.updates;
        row.eval_return = snapshot_eval(agent, cfg, step);
        if (interval_updates > 0) {
          const auto n = static_cast<double>(interval_updates);
          row.actor_loss = sums.actor_loss / n;
          row.critic_loss = sums.critic_loss / n;
          row.value_loss = sums.value_loss / n;
          row.mean_weight = sums.mean_weight / n;
        }
        const Tensor probes = probe_states(buffer, seed, step, cfg.contrast_states);
        if (probes.size() > 0) {
          const ContrastStats c = snapshot_contrast(agent, cfg, probes, step);
          row.delta_q = c.delta_q;
          row.guided_gap = c.guided_gap;
        }
        row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        result.rows.push_back(row);
        if (hooks.on_row) hooks.on_row(row);
        if (cfg.checkpoint_every_eval && hooks.on_checkpoint) hooks.on_checkpoint(agent, step, probes, false);
        if (step == cfg.total_steps) result.final_probe_states = probes;
        sums = {};
        interval_updates = 0;
      }
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " (env step " + std::to_string(step) + ")", e.diffusion_step(), step);
    }
  }
  result.clipped_actions = env.clipped_actions();
  if (hooks.on_checkpoint) hooks.on_checkpoint(agent, cfg.total_steps, result.final_probe_states, true);
  return result;
}

}  // namespace cgpo
