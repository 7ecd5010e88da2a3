// Acceptance checks, one line per criterion. Exit status is the number of
// failing criteria (capped at 100).

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cgpo/actor_update.hpp"
#include "cgpo/critic.hpp"
#include "cgpo/guidance.hpp"
#include "cgpo/trainer.hpp"
#include "support/oracles.hpp"

using namespace cgpo;
namespace fs = std::filesystem;

namespace {

struct Budget {
  long full_steps = 20000;
  long reduced_steps = 10000;
  std::size_t reduced_batch = 64;
  std::size_t bandit_batch = 256;
  int seeds = 5;
};

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

// Flattened reverse-mode vs central-difference relative error over all tensors.
double flat_rel_err(const std::vector<Tensor>& analytic, std::vector<Tensor*> params,
                    const std::function<double()>& f) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const Tensor fd = oracle::central_difference(f, *params[p]);
    for (std::size_t i = 0; i < fd.size(); ++i) {
      d += (analytic[p][i] - fd[i]) * (analytic[p][i] - fd[i]);
      na += analytic[p][i] * analytic[p][i];
      nb += fd[i] * fd[i];
    }
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale == 0.0 ? std::sqrt(d) : std::sqrt(d) / scale;
}

std::vector<std::size_t> random_hidden(Rng& rng) {
  std::vector<std::size_t> h(static_cast<std::size_t>(rng.uniform_int(1, 2)));
  for (auto& w : h) w = static_cast<std::size_t>(rng.uniform_int(4, 32));
  return h;
}

DiffusionPolicy random_policy(Rng& rng, std::size_t s, std::size_t d) {
  return DiffusionPolicy(s, ActionBox::symmetric(d, 1.0), make_schedule(20, 1e-4, 2e-2), random_hidden(rng),
                         Activation::mish, rng);
}

// Scalar loss recorded on `tape` from bound noise-network parameters.
using TapedLoss = std::function<Var(Tape&, std::span<const Var>)>;

double policy_gradient_error(DiffusionPolicy& policy, const TapedLoss& loss) {
  Tape tape;
  auto params = policy.eps_net().bind(tape, true);
  tape.backward(loss(tape, params));
  const auto grads = tape.grads(params);
  auto f = [&] {
    Tape t;
    auto p = policy.eps_net().bind(t, false);
    return t.value(loss(t, p)).item();
  };
  return flat_rel_err(grads, policy.eps_net().parameters(), f);
}

Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  std::map<std::string, double> worst;
  const int nets = 20;
  for (int n = 0; n < nets; ++n) {
    const std::size_t s = static_cast<std::size_t>(rng.uniform_int(1, 4));
    const std::size_t d = static_cast<std::size_t>(rng.uniform_int(1, 3));
    const std::size_t rows = 6;
    DiffusionPolicy policy = random_policy(rng, s, d);
    const Tensor states = oracle::random_tensor({rows, s}, rng);
    const Tensor actions = oracle::random_tensor({rows, d}, rng);
    std::vector<double> w(rows);
    for (double& v : w) v = rng.uniform(0.0, 2.0);
    const std::uint64_t draw = rng.next_u64();

    worst["denoise"] = std::max(worst["denoise"], policy_gradient_error(policy, [&](Tape&, std::span<const Var> p) {
      Rng r(draw);
      return base_denoise_loss(policy, p, states, actions, r);
    }));
    worst["weighted_denoise"] =
        std::max(worst["weighted_denoise"], policy_gradient_error(policy, [&](Tape&, std::span<const Var> p) {
          Rng r(draw);
          return weighted_diffusion_loss(policy, p, states, actions, w, r);
        }));
    ActorLossConfig ent;
    ent.uniform_samples = 3;
    worst["entropy"] = std::max(worst["entropy"], policy_gradient_error(policy, [&](Tape&, std::span<const Var> p) {
      Rng r(draw);
      return entropy_loss(policy, p, states, w, ent, r);
    }));

    ValueNet value(s, random_hidden(rng), Activation::mish, 3e-4, rng);
    std::vector<double> y(rows);
    for (double& v : y) v = rng.uniform(-2.0, 2.0);
    const Tensor target = Tensor::matrix(rows, 1, y);
    auto value_loss = [&](Tape& tape, std::span<const Var> p) {
      return ad::mean(ad::square(ad::sub(value.net.forward(p, tape.constant(states)), tape.constant(target))));
    };
    {
      Tape tape;
      auto params = value.net.bind(tape, true);
      tape.backward(value_loss(tape, params));
      const auto grads = tape.grads(params);
      auto f = [&] {
        Tape t;
        auto p = value.net.bind(t, false);
        return t.value(value_loss(t, p)).item();
      };
      worst["value"] = std::max(worst["value"], flat_rel_err(grads, value.net.parameters(), f));
    }

    CriticConfig cc;
    cc.hidden = random_hidden(rng);
    cc.quantiles = static_cast<std::size_t>(rng.uniform_int(3, 25));
    cc.truncation = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(cc.quantiles) - 1));
    CriticEnsemble critic(s, d, cc, rng);
    Tensor x = oracle::random_tensor({rows, d}, rng, -0.8, 0.8);
    const int t = static_cast<int>(rng.uniform_int(1, 20));
    const Tensor g = guidance_gradient(policy, critic, states, x, t);
    auto objective = [&] {
      Tensor x0 = predict_x0(x, policy.predict_noise(x, states, t), t, policy.schedule());
      policy.box().widened(1.5).clip(x0);
      double total = 0.0;
      for (double q : critic.evaluate(states, x0)) total -= q;
      return total;
    };
    worst["guidance_objective"] = std::max(worst["guidance_objective"], oracle::rel_err(g, oracle::central_difference(objective, x)));
  }
  const double elapsed = seconds_since(t0);
  bool pass = elapsed < 60.0;
  std::string detail;
  for (const auto& [name, err] : worst) {
    const double tol = name == "guidance_objective" ? 1e-3 : 1e-4;
    pass = pass && err < tol;
    detail += fmt("%s %.1e (tol %.0e), ", name.c_str(), err, tol);
  }
  return {pass, fmt("%d nets; ", nets) + detail + fmt("%.1fs", elapsed)};
}

Outcome shell_invariant() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(202);
  const DiffusionSchedule sched = make_schedule(20, 1e-4, 2e-2);
  const double rates[] = {0.0, 0.5, 0.95, 1.0};
  int outside = 0, misaligned = 0, lower_checked = 0;
  const int trials = 10000;
  for (int i = 0; i < trials; ++i) {
    const std::size_t d = std::size_t{1} << rng.uniform_int(0, 3);
    const double rho = rates[rng.index(4)];
    const double sigma = sched.sigma[static_cast<std::size_t>(rng.uniform_int(2, 20))];
    std::vector<double> mu(d), g(d);
    for (std::size_t j = 0; j < d; ++j) {
      mu[j] = rng.normal();
      g[j] = rng.normal();
    }
    Rng replay = rng;
    const auto x = dsg_step(mu, g, sigma, rho, rng);
    const double r = std::sqrt(static_cast<double>(d)) * sigma;
    const double gn = l2_norm(g);
    double mixed_sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double z = sigma * replay.normal();
      const double m = (1.0 - rho) * z + rho * (-r * g[j] / (gn + 1e-8));
      mixed_sq += m * m;
    }
    double disp_sq = 0.0, dot = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      disp_sq += (x[j] - mu[j]) * (x[j] - mu[j]);
      dot += (x[j] - mu[j]) * g[j];
    }
    const double disp = std::sqrt(disp_sq);
    bool ok = disp <= r;
    if (std::sqrt(mixed_sq) >= 1e-2) {
      ++lower_checked;
      ok = ok && disp >= r * (1.0 - 1e-6);
    }
    if (!ok) ++outside;
    if (rho == 1.0 && dot > 0.0) ++misaligned;
  }
  const double elapsed = seconds_since(t0);
  return {outside == 0 && misaligned == 0 && elapsed < 10.0,
          fmt("%d steps, %d off-shell (lower bound checked on %d), %d misaligned at rho=1, %.2fs", trials, outside,
              lower_checked, misaligned, elapsed)};
}

Outcome truncated_oracle() {
  Rng rng(303);
  int mismatched = 0, non_monotone = 0;
  const int trials = 10000;
  for (int i = 0; i < trials; ++i) {
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(1, 4));
    const std::size_t m = static_cast<std::size_t>(rng.uniform_int(1, 32));
    Tensor q = oracle::random_tensor({n, m}, rng, -5.0, 5.0);
    if (rng.index(4) == 0) {
      for (std::size_t j = 0; j < q.size(); ++j) q[j] = std::round(q[j]);
    }
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < m; ++k) {
      double brute = 0.0;
      for (std::size_t r = 0; r < n; ++r) {
        std::vector<double> row(q.row_span(r).begin(), q.row_span(r).end());
        std::sort(row.begin(), row.end());
        brute += std::accumulate(row.begin(), row.begin() + static_cast<long>(m - k), 0.0) / static_cast<double>(m - k);
      }
      brute /= static_cast<double>(n);
      const double got = aggregate_truncated(q, k);
      if (got != brute) ++mismatched;
      if (got > prev) ++non_monotone;
      prev = got;
    }
  }
  return {mismatched == 0 && non_monotone == 0,
          fmt("%d instances, %d mismatches, %d monotonicity violations", trials, mismatched, non_monotone)};
}

Outcome diffusion_expressiveness() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng init(404);
  DiffusionPolicy policy(1, ActionBox::symmetric(1, 1.0), make_schedule(20, 1e-4, 2e-2), {32, 32}, Activation::mish,
                         init);
  AdamState opt;
  Rng rng(405);
  const std::size_t batch = 256;
  for (int it = 0; it < 5000; ++it) {
    const Tensor states = oracle::random_tensor({batch, 1}, rng);
    Tensor x0 = Tensor::matrix(batch, 1);
    for (std::size_t r = 0; r < batch; ++r) x0[r] = rng.index(2) == 0 ? -0.5 : 0.5;
    Tape tape;
    auto params = policy.eps_net().bind(tape, true);
    tape.backward(base_denoise_loss(policy, params, states, x0, rng));
    adam_step(policy.eps_net(), tape.grads(params), opt, 1e-3);
  }
  const std::size_t draws = 2000;
  const Tensor a = sample_unguided(policy, oracle::random_tensor({draws, 1}, rng), rng);
  double lo = 0, hi = 0;
  for (std::size_t r = 0; r < draws; ++r) {
    lo += std::abs(a[r] + 0.5) <= 0.15;
    hi += std::abs(a[r] - 0.5) <= 0.15;
  }
  lo /= draws;
  hi /= draws;
  const double elapsed = seconds_since(t0);
  return {std::abs(lo - 0.5) <= 0.1 && std::abs(hi - 0.5) <= 0.1 && elapsed < 180.0,
          fmt("mode -0.5: %.3f, mode +0.5: %.3f, %.1fs", lo, hi, elapsed)};
}

Outcome guidance_improvement() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng init(505);
  const auto policy = oracle::box_prior_policy(2, 2, init);
  const QuadraticCritic critic([](std::span<const double> s) {
    std::vector<double> out(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) out[i] = 0.6 * std::tanh(s[i]);
    return out;
  });
  GuidanceConfig cfg;
  const std::size_t n = 500;
  Rng data(506);
  const Tensor states = oracle::random_tensor({n, 2}, data);
  Rng a(507), b(508);
  const Tensor ag = refine_action(policy, critic, states, cfg, a);
  const Tensor au = sample_unguided(policy, states, b);
  std::vector<double> dg(n), du(n), diff(n);
  for (std::size_t r = 0; r < n; ++r) {
    const auto target = critic.optimum(states.row_span(r));
    double sg = 0, su = 0;
    for (std::size_t c = 0; c < 2; ++c) {
      sg += (ag(r, c) - target[c]) * (ag(r, c) - target[c]);
      su += (au(r, c) - target[c]) * (au(r, c) - target[c]);
    }
    dg[r] = std::sqrt(sg);
    du[r] = std::sqrt(su);
    diff[r] = du[r] - dg[r];
  }
  const double mg = mean_of(dg), mu = mean_of(du), md = mean_of(diff);
  double sq = 0.0;
  for (double v : diff) sq += (v - md) * (v - md);
  const double tstat = md / std::sqrt(sq / (n - 1) / n);
  const double t_crit = 2.334;  // one-sided 0.01, 499 degrees of freedom
  const double elapsed = seconds_since(t0);
  return {mg < 0.5 * mu && tstat > t_crit && elapsed < 120.0,
          fmt("guided %.3f vs unguided %.3f (ratio %.2f), paired t %.1f, %.1fs", mg, mu, mg / mu, tstat, elapsed)};
}

TrainConfig pointmass(std::uint64_t seed, long steps, std::size_t batch) {
  TrainConfig c;
  c.seed = seed;
  c.total_steps = steps;
  c.batch_size = batch;
  c.buffer_capacity = 100000;
  c.eval_episodes = 20;
  c.eval_interval = std::max(1L, steps / 10);
  c.contrast_states = 64;
  return c;
}

double final_return(const TrainResult& r) { return r.rows.back().eval_return; }

// Reduced-budget point-mass runs shared by criteria 6, 8, 9 and 10.
class RunCache {
 public:
  explicit RunCache(const Budget& b) : budget_(b) {}

  const TrainResult& get(const std::string& label, int seed, const std::function<void(TrainConfig&)>& edit) {
    const std::string key = label + "#" + std::to_string(seed);
    auto it = runs_.find(key);
    if (it != runs_.end()) return it->second;
    TrainConfig cfg = pointmass(static_cast<std::uint64_t>(seed), budget_.reduced_steps, budget_.reduced_batch);
    edit(cfg);
    const auto t0 = std::chrono::steady_clock::now();
    TrainResult r = train(cfg);
    std::printf("  run %-16s seed %d: final return %8.3f (%.0fs)\n", label.c_str(), seed, final_return(r),
                seconds_since(t0));
    std::fflush(stdout);
    return runs_.emplace(key, std::move(r)).first->second;
  }

  std::vector<double> finals(const std::string& label, const std::function<void(TrainConfig&)>& edit) {
    std::vector<double> out;
    for (int s = 1; s <= budget_.seeds; ++s) out.push_back(final_return(get(label, s, edit)));
    return out;
  }

 private:
  Budget budget_;
  std::map<std::string, TrainResult> runs_;
};

void keep(TrainConfig&) {}

Outcome pointmass_learning(const Budget& b, RunCache& cache) {
  const auto t0 = std::chrono::steady_clock::now();
  TrainConfig cfg = pointmass(1, b.full_steps, 256);
  const TrainResult full = train(cfg);
  const double elapsed = seconds_since(t0);
  const double ret = final_return(full);

  const auto cgpo = cache.finals("cgpo", keep);
  const auto unguided = cache.finals("cgpo_unguided", [](TrainConfig& c) { c.variant = Variant::cgpo_unguided; });
  int worse = 0;
  for (std::size_t i = 0; i < cgpo.size(); ++i) worse += unguided[i] < cgpo[i];
  const int need = b.seeds - 1;
  return {ret >= -12.0 && elapsed < 900.0 && worse >= need,
          fmt("full run %ld steps: return %.3f (need >= -12), %.0fs (need < 900); unguided worse on %d/%d seeds "
              "at %ld steps (need >= %d)",
              b.full_steps, ret, elapsed, worse, b.seeds, b.reduced_steps, need)};
}

struct BanditModes {
  double reward = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

BanditModes bandit_run(double entropy_weight, const Budget& b) {
  TrainConfig c;
  c.env = "bandit";
  c.seed = 7;
  c.warmup_steps = 1000;
  c.total_steps = c.warmup_steps + 10000 - 1;
  c.batch_size = b.bandit_batch;
  c.eval_interval = 1000;
  c.contrast_states = 0;
  c.actor.entropy_weight = entropy_weight;
  const TrainResult r = train(c);
  Rng rng(708);
  const std::size_t n = 2000;
  const Tensor states = oracle::random_tensor({n, 1}, rng);
  const Tensor a = sample_unguided(r.agent.policy, states, rng);
  BanditModes m;
  for (std::size_t i = 0; i < n; ++i) {
    m.reward += Bandit::reward(a[i]);
    m.lo += std::abs(a[i] + 0.5) <= 0.15;
    m.hi += std::abs(a[i] - 0.5) <= 0.15;
  }
  m.reward /= n;
  m.lo /= n;
  m.hi /= n;
  std::printf("  bandit lambda_ent=%.2f: %ld updates, reward %.3f, modes %.3f / %.3f\n", entropy_weight, r.updates,
              m.reward, m.lo, m.hi);
  std::fflush(stdout);
  return m;
}

Outcome bandit_multimodality(const Budget& b) {
  const BanditModes low = bandit_run(0.02, b);
  const BanditModes high = bandit_run(0.5, b);
  const double imbalance_low = std::abs(low.lo - low.hi) / std::max(low.lo + low.hi, 1e-12);
  const double imbalance_high = std::abs(high.lo - high.hi) / std::max(high.lo + high.hi, 1e-12);
  return {low.reward >= 0.9 && low.lo >= 0.2 && low.hi >= 0.2 && imbalance_high <= imbalance_low,
          fmt("lambda 0.02: reward %.3f, modes %.3f/%.3f; lambda 0.5: modes %.3f/%.3f, imbalance %.3f vs %.3f",
              low.reward, low.lo, low.hi, high.lo, high.hi, imbalance_high, imbalance_low)};
}

Outcome contrast_evolution(RunCache& cache) {
  const auto& qvpo = cache.get("qvpo_sampling", 1, [](TrainConfig& c) {
    c.variant = Variant::qvpo_sampling;
    c.contrast_candidates = 64;
  });
  const auto& cgpo = cache.get("cgpo", 1, keep);
  double dq_max = -INFINITY, gap_max = -INFINITY;
  for (const auto& r : qvpo.rows) {
    if (!std::isnan(r.delta_q)) dq_max = std::max(dq_max, r.delta_q);
  }
  for (const auto& r : cgpo.rows) {
    if (!std::isnan(r.guided_gap)) gap_max = std::max(gap_max, r.guided_gap);
  }
  const double dq_final = qvpo.rows.back().delta_q;
  const double gap_final = cgpo.rows.back().guided_gap;
  return {dq_max > 0.0 && dq_final < 0.5 * dq_max && gap_max > 0.0 && gap_final > 0.5 * gap_max,
          fmt("qvpo delta_q final %.4f vs max %.4f; cgpo guided gap final %.4f vs max %.4f", dq_final, dq_max,
              gap_final, gap_max)};
}

Outcome rho_ordering(const Budget& b, RunCache& cache) {
  const auto r95 = cache.finals("cgpo", keep);
  const auto r65 = cache.finals("rho_0.65", [](TrainConfig& c) { c.guidance.rate = 0.65; });
  const auto r35 = cache.finals("rho_0.35", [](TrainConfig& c) { c.guidance.rate = 0.35; });
  const auto g5 = cache.finals("G_5", [](TrainConfig& c) { c.guidance.guided_steps = 5; });
  int best = 0;
  for (int i = 0; i < b.seeds; ++i) best += r95[i] >= r65[i] && r95[i] >= r35[i];
  const double m95 = mean_of(r95), m65 = mean_of(r65), m35 = mean_of(r35), mg5 = mean_of(g5);
  return {m95 >= m65 && m65 >= m35 && best >= 3 && m95 >= mg5,
          fmt("mean rho 0.95 %.3f, 0.65 %.3f, 0.35 %.3f; rho 0.95 best on %d/%d; G=10 %.3f vs G=5 %.3f", m95, m65,
              m35, best, b.seeds, m95, mg5)};
}

Outcome ablation_directionality(RunCache& cache) {
  const double full = mean_of(cache.finals("cgpo", keep));
  const double naive =
      mean_of(cache.finals("naive", [](TrainConfig& c) { c.variant = Variant::cgpo_naive_guidance; }));
  const double unguided =
      mean_of(cache.finals("cgpo_unguided", [](TrainConfig& c) { c.variant = Variant::cgpo_unguided; }));
  const double no_ddqn = mean_of(cache.finals("no_ddqn", [](TrainConfig& c) { c.use_ddqn = false; }));
  const double no_tqc = mean_of(cache.finals("no_truncation", [](TrainConfig& c) { c.use_truncation = false; }));
  const double no_v = mean_of(cache.finals("no_valuenet", [](TrainConfig& c) { c.use_valuenet = false; }));
  const bool pass = naive <= full && no_ddqn <= full && no_tqc <= full && no_v <= full && naive >= unguided;
  return {pass, fmt("cgpo %.3f; naive %.3f, no_ddqn %.3f, no_truncation %.3f, no_valuenet %.3f; unguided %.3f",
                    full, naive, no_ddqn, no_tqc, no_v, unguided)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / ("cgpo_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(root);
  std::ofstream(root / "config.json") << R"({
  "env": "pointmass",
  "train": {"total_steps": 600, "warmup_steps": 200, "batch_size": 64, "eval_interval": 200, "eval_episodes": 5},
  "analysis": {"contrast_states": 32}
})";
  std::vector<std::string> outputs;
  bool ran = true;
  for (const char* run : {"a", "b"}) {
    const std::string cmd = std::string(CGPO_LAB_PATH) + " train --config " + (root / "config.json").string() +
                            " --seed 11 --out " + (root / run).string() + " > " + (root / "log.txt").string() +
                            " 2>&1";
    ran = ran && std::system(cmd.c_str()) == 0;
    outputs.push_back(slurp(root / run / "metrics.csv"));
  }
  fs::remove_all(root);
  const bool same = ran && !outputs[0].empty() && outputs[0] == outputs[1];
  return {same, fmt("two runs, %zu bytes each, %s", outputs[0].size(), same ? "identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  Budget b;
  std::vector<int> only;
  app.add_option("--only", only, "criteria to run (default: all)")->delimiter(',');
  app.add_option("--full-steps", b.full_steps, "env steps for the full point-mass run");
  app.add_option("--reduced-steps", b.reduced_steps, "env steps for multi-seed comparisons");
  app.add_option("--reduced-batch", b.reduced_batch, "batch size for multi-seed comparisons");
  app.add_option("--bandit-batch", b.bandit_batch, "batch size for the bandit runs");
  app.add_option("--seeds", b.seeds, "seeds for multi-seed comparisons");
  CLI11_PARSE(app, argc, argv);

  RunCache cache(b);
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, gradient_correctness},
      {2, shell_invariant},
      {3, truncated_oracle},
      {4, diffusion_expressiveness},
      {5, guidance_improvement},
      {6, [&] { return pointmass_learning(b, cache); }},
      {7, [&] { return bandit_multimodality(b); }},
      {8, [&] { return contrast_evolution(cache); }},
      {9, [&] { return rho_ordering(b, cache); }},
      {10, [&] { return ablation_directionality(cache); }},
      {11, determinism},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failed = 0;
  for (const auto& [id, check] : criteria) {
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %2d: %s  %s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return std::min(failed, 100);
}
