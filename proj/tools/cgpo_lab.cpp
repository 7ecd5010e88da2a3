// cgpo-lab: train, sweep, ablate, contrast and eval front end.

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "cgpo/analysis.hpp"
#include "cgpo/config.hpp"
#include "cgpo/errors.hpp"
#include "cgpo/trainer.hpp"

namespace fs = std::filesystem;
using namespace cgpo;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

std::mutex log_mutex;

void log_line(const std::string& s) {
  std::lock_guard<std::mutex> lock(log_mutex);
  std::cerr << s << '\n';
}

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "runs";
  std::vector<std::string> overrides;
};

RunConfig load_run_config(const CommonOptions& opt) {
  json user = opt.config_path.empty() ? json::object() : load_config_file(opt.config_path);
  if (!user.is_object()) throw ConfigError(opt.config_path + ": top level must be a JSON object");
  for (const auto& o : opt.overrides) apply_override(user, o);
  if (opt.seed) user["seed"] = *opt.seed;
  RunConfig rc = config_from_json(user);
  rc.train.validate();
  return rc;
}

struct RunSummary {
  std::string name;
  double final_return = 0.0;
  long updates = 0;
};

/// One training run writing config echo, metrics, timing and checkpoints under `dir`.
RunSummary run_training(const RunConfig& rc, const fs::path& dir, const std::string& name) {
  fs::create_directories(dir / "checkpoints");
  RunConfig echo = rc;
  echo.sweep = json::object();
  write_json_file((dir / "config.json").string(), config_to_json(echo));

  CsvWriter metrics((dir / "metrics.csv").string(), kMetricsHeader);
  CsvWriter timing((dir / "timing.csv").string(), "env_step,wall_seconds");
  TrainHooks hooks;
  hooks.on_row = [&](const MetricsRow& row) {
    metrics.write_line(metrics_csv_line(row));
    timing.write_line(std::to_string(row.env_step) + "," + format_double(row.wall_seconds));
    log_line("[" + name + "] step " + std::to_string(row.env_step) + " return " + format_double(row.eval_return) +
             " mean_w " + format_double(row.mean_weight));
  };
  hooks.on_checkpoint = [&](const Agent& agent, long step, const Tensor& probes, bool final) {
    const std::string file = final ? "final.json" : "step_" + std::to_string(step) + ".json";
    write_json_file((dir / "checkpoints" / file).string(), agent_checkpoint_json(agent, echo, step, probes));
  };
  hooks.on_warning = [&](const std::string& msg) { log_line("[" + name + "] warning: " + msg); };

  const TrainResult result = train(rc.train, hooks);
  RunSummary summary{name, result.rows.empty() ? 0.0 : result.rows.back().eval_return, result.updates};
  write_json_file((dir / "summary.json").string(), {{"final_eval_return", summary.final_return},
                                                    {"updates", result.updates},
                                                    {"clipped_actions", result.clipped_actions}});
  return summary;
}

std::size_t thread_cap() {
  if (const char* env = std::getenv("CGPO_LAB_THREADS")) {
    try {
      const long n = std::stol(env);
      if (n >= 1) return static_cast<std::size_t>(n);
    } catch (const std::exception&) {
    }
    throw ConfigError("CGPO_LAB_THREADS must be a positive integer");
  }
  return 1;
}

struct PlannedRun {
  std::string name;
  RunConfig config;
};

/// Runs independent trainings on up to CGPO_LAB_THREADS workers. The first
/// failure is rethrown after every worker has finished.
std::vector<RunSummary> run_all(const std::vector<PlannedRun>& runs, const fs::path& out) {
  std::vector<RunSummary> summaries(runs.size());
  std::vector<std::exception_ptr> errors(runs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < runs.size(); i = next++) {
      try {
        summaries[i] = run_training(runs[i].config, out / runs[i].name, runs[i].name);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n = std::min(thread_cap(), runs.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return summaries;
}

void write_summary_csv(const fs::path& path, const std::vector<RunSummary>& runs) {
  CsvWriter w(path.string(), "run,final_eval_return,updates");
  for (const auto& r : runs) w.write_line(r.name + "," + format_double(r.final_return) + "," + std::to_string(r.updates));
}

std::string value_label(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

std::vector<PlannedRun> plan_sweep(const CommonOptions& opt) {
  json user = opt.config_path.empty() ? json::object() : load_config_file(opt.config_path);
  for (const auto& o : opt.overrides) apply_override(user, o);
  if (opt.seed) user["seed"] = *opt.seed;
  const RunConfig base = config_from_json(user);
  if (base.sweep.empty()) throw ConfigError("sweep table is empty: set e.g. sweep.guidance.rho=[0.35,0.65,0.95]");

  std::vector<std::pair<std::string, json>> axes;
  for (const auto& [key, values] : base.sweep.items()) axes.emplace_back(key, values);
  std::vector<PlannedRun> runs;
  std::vector<std::size_t> pos(axes.size(), 0);
  while (true) {
    json doc = user;
    doc.erase("sweep");
    std::string name;
    for (std::size_t a = 0; a < axes.size(); ++a) {
      const json& v = axes[a].second[pos[a]];
      set_dotted(doc, axes[a].first, v);
      const auto dot = axes[a].first.rfind('.');
      name += (name.empty() ? "" : "_") + axes[a].first.substr(dot == std::string::npos ? 0 : dot + 1) + "-" +
              value_label(v);
    }
    RunConfig rc = config_from_json(doc);
    rc.train.validate();
    runs.push_back({name, rc});
    std::size_t a = axes.size();
    while (a > 0) {
      --a;
      if (++pos[a] < axes[a].second.size()) break;
      pos[a] = 0;
      if (a == 0) return runs;
    }
    if (axes.empty()) return runs;
  }
}

std::vector<PlannedRun> plan_ablation(const RunConfig& base) {
  auto with = [&](const std::string& name, auto&& edit) {
    RunConfig rc = base;
    rc.sweep = json::object();
    rc.train.variant = Variant::cgpo;
    edit(rc.train);
    if (auto mode = variant_guidance_mode(rc.train.variant)) rc.train.guidance.mode = *mode;
    rc.train.validate();
    return PlannedRun{name, rc};
  };
  return {with("cgpo_unguided", [](TrainConfig& c) { c.variant = Variant::cgpo_unguided; }),
          with("cgpo_naive_guidance", [](TrainConfig& c) { c.variant = Variant::cgpo_naive_guidance; }),
          with("no_ddqn", [](TrainConfig& c) { c.use_ddqn = false; }),
          with("no_truncation", [](TrainConfig& c) { c.use_truncation = false; }),
          with("no_valuenet", [](TrainConfig& c) { c.use_valuenet = false; })};
}

std::vector<LoadedCheckpoint> load_run_checkpoints(const fs::path& run_dir) {
  const fs::path dir = run_dir / "checkpoints";
  if (!fs::is_directory(dir)) throw ConfigError("no checkpoints directory under '" + run_dir.string() + "'");
  std::vector<LoadedCheckpoint> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string file = entry.path().filename().string();
    if (file.rfind("step_", 0) != 0 || entry.path().extension() != ".json") continue;
    out.push_back(agent_from_checkpoint(read_json_file(entry.path().string())));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.env_step < b.env_step; });
  if (out.empty()) throw ConfigError("no step checkpoints under '" + dir.string() + "'");
  return out;
}

int cmd_train(const CommonOptions& opt) {
  const RunConfig rc = load_run_config(opt);
  const RunSummary s = run_training(rc, opt.out, "train");
  std::cout << "final_eval_return " << format_double(s.final_return) << '\n';
  return kExitOk;
}

int cmd_sweep(const CommonOptions& opt) {
  const auto runs = plan_sweep(opt);
  fs::create_directories(opt.out);
  write_summary_csv(fs::path(opt.out) / "sweep.csv", run_all(runs, opt.out));
  return kExitOk;
}

int cmd_ablate(const CommonOptions& opt) {
  const auto runs = plan_ablation(load_run_config(opt));
  fs::create_directories(opt.out);
  write_summary_csv(fs::path(opt.out) / "ablate.csv", run_all(runs, opt.out));
  return kExitOk;
}

int cmd_contrast(const CommonOptions& opt, const std::string& sampling_run, const std::string& guided_run) {
  fs::path sampling_dir = sampling_run;
  fs::path guided_dir = guided_run;
  if (sampling_run.empty() || guided_run.empty()) {
    RunConfig base = load_run_config(opt);
    base.sweep = json::object();
    base.train.checkpoint_every_eval = true;
    RunConfig sampling = base;
    sampling.train.variant = Variant::qvpo_sampling;
    RunConfig guided = base;
    guided.train.variant = Variant::cgpo;
    guided.train.guidance.mode = GuidanceMode::dsg;
    std::vector<PlannedRun> runs;
    if (sampling_run.empty()) runs.push_back({"qvpo_sampling", sampling});
    if (guided_run.empty()) runs.push_back({"cgpo", guided});
    run_all(runs, opt.out);
    if (sampling_run.empty()) sampling_dir = fs::path(opt.out) / "qvpo_sampling";
    if (guided_run.empty()) guided_dir = fs::path(opt.out) / "cgpo";
  }
  const DeltaQReport report = contrast_report(load_run_checkpoints(sampling_dir), load_run_checkpoints(guided_dir));
  fs::create_directories(opt.out);
  write_report_csv((fs::path(opt.out) / "delta_q_report.csv").string(), report);
  std::cout << "report rows " << report.env_step.size() << '\n';
  return kExitOk;
}

int cmd_eval(const CommonOptions& opt, const std::string& checkpoint, std::optional<int> episodes) {
  if (checkpoint.empty()) throw ConfigError("eval needs --checkpoint <file>");
  LoadedCheckpoint ck = agent_from_checkpoint(read_json_file(checkpoint));
  TrainConfig cfg = ck.config.train;
  if (opt.seed) cfg.seed = *opt.seed;
  if (episodes) {
    if (*episodes < 1) throw ConfigError("--episodes must be >= 1");
    cfg.eval_episodes = *episodes;
  }
  if (!cfg.seed) throw ConfigError("checkpoint config has no seed; pass --seed");
  const double ret = snapshot_eval(ck.agent, cfg, ck.env_step);
  fs::create_directories(opt.out);
  write_json_file((fs::path(opt.out) / "eval.json").string(),
                  {{"checkpoint", checkpoint}, {"env_step", ck.env_step}, {"episodes", cfg.eval_episodes},
                   {"mean_return", ret}});
  std::cout << "mean_return " << format_double(ret) << '\n';
  return kExitOk;
}

void add_common(CLI::App* cmd, CommonOptions& opt, bool config_required) {
  auto* c = cmd->add_option("--config", opt.config_path, "JSON run configuration");
  if (config_required) c->required();
  cmd->add_option("--seed", opt.seed, "Seed (overrides the config)");
  cmd->add_option("--out", opt.out, "Output directory")->capture_default_str();
  cmd->add_option("--set", opt.overrides, "Dotted override key=value (repeatable)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cgpo-lab: critic-guided diffusion policy experiments"};
  app.require_subcommand(1);
  CommonOptions opt;
  std::string sampling_run;
  std::string guided_run;
  std::string checkpoint;
  std::optional<int> episodes;

  auto* train_cmd = app.add_subcommand("train", "Run one training configuration");
  auto* sweep_cmd = app.add_subcommand("sweep", "Cartesian sweep over the config's sweep table");
  auto* ablate_cmd = app.add_subcommand("ablate", "Run the five ablation variants");
  auto* contrast_cmd = app.add_subcommand("contrast", "Delta_Q report across saved checkpoints");
  auto* eval_cmd = app.add_subcommand("eval", "Mean return of a saved checkpoint");
  for (auto* cmd : {train_cmd, sweep_cmd, ablate_cmd, contrast_cmd}) add_common(cmd, opt, true);
  add_common(eval_cmd, opt, false);
  contrast_cmd->add_option("--sampling-run", sampling_run, "Existing qvpo_sampling run directory");
  contrast_cmd->add_option("--guided-run", guided_run, "Existing cgpo run directory");
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--episodes", episodes, "Evaluation episodes (default from the checkpoint config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*train_cmd) return cmd_train(opt);
    if (*sweep_cmd) return cmd_sweep(opt);
    if (*ablate_cmd) return cmd_ablate(opt);
    if (*contrast_cmd) return cmd_contrast(opt, sampling_run, guided_run);
    if (*eval_cmd) return cmd_eval(opt, checkpoint, episodes);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric abort";
    if (e.env_step()) std::cerr << " at env_step " << *e.env_step();
    std::cerr << ": " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
