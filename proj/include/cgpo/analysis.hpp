#pragma once

#include <nlohmann/json.hpp>

#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <string>
#include <system_error>
#include <vector>

#include "cgpo/checkpoint.hpp"
#include "cgpo/config.hpp"
#include "cgpo/contrast.hpp"
#include "cgpo/errors.hpp"
#include "cgpo/trainer.hpp"

namespace cgpo {

/// Shortest round-trip decimal form, independent of locale.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  if (res.ec != std::errc{}) throw StateError("failed to format a double");
  return std::string(buf, res.ptr);
}

inline constexpr const char* kMetricsHeader =
    "env_step,updates,eval_return,actor_loss,critic_loss,value_loss,mean_weight,delta_q,guided_gap";

inline std::string metrics_csv_line(const MetricsRow& r) {
  std::string s = std::to_string(r.env_step) + "," + std::to_string(r.updates);
  for (double v : {r.eval_return, r.actor_loss, r.critic_loss, r.value_loss, r.mean_weight, r.delta_q, r.guided_gap}) {
    s += ",";
    s += format_double(v);
  }
  return s;
}

/// Line-oriented CSV file: fixed header, LF endings, flushed per row.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::string& header) : out_(path, std::ios::binary) {
    if (!out_) throw StateError("cannot open '" + path + "' for writing");
    write_line(header);
  }

  void write_line(const std::string& line) {
    out_ << line << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

inline void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  CsvWriter w(path, kMetricsHeader);
  for (const auto& r : rows) w.write_line(metrics_csv_line(r));
}

/// Per-checkpoint critic contrast of a sampling run next to the guided gap of
/// a CGPO run, both averaged over `states` buffer states with K candidates.
struct DeltaQReport {
  std::vector<long> env_step;
  std::vector<double> delta_q;
  std::vector<double> guided_gap;
  std::size_t states = 0;
  std::size_t candidates = 0;
};

inline constexpr const char* kReportHeader = "env_step,delta_q,guided_gap,states,candidates";

inline void write_report_csv(const std::string& path, const DeltaQReport& report) {
  CsvWriter w(path, kReportHeader);
  for (std::size_t i = 0; i < report.env_step.size(); ++i) {
    w.write_line(std::to_string(report.env_step[i]) + "," + format_double(report.delta_q[i]) + "," +
                 format_double(report.guided_gap[i]) + "," + std::to_string(report.states) + "," +
                 std::to_string(report.candidates));
  }
}

/// Snapshot of every network plus what is needed to rebuild it: the full
/// config, the env step, and the probe states used for contrast columns.
inline json agent_checkpoint_json(const Agent& agent, const RunConfig& rc, long env_step, const Tensor& probes) {
  json critics = json::array();
  json targets = json::array();
  for (const auto& net : agent.critic.nets()) critics.push_back(mlp_to_json(net));
  for (const auto& net : agent.critic.target_nets()) targets.push_back(mlp_to_json(net));
  return {{"format_version", kCheckpointFormat},
          {"env_step", env_step},
          {"config", config_to_json(rc)},
          {"policy", mlp_to_json(agent.policy.eps_net())},
          {"critic", critics},
          {"critic_target", targets},
          {"value", mlp_to_json(agent.value.net)},
          {"probe_states", tensor_to_json(probes)}};
}

struct LoadedCheckpoint {
  RunConfig config;
  Agent agent;
  long env_step = 0;
  Tensor probe_states;
};

inline LoadedCheckpoint agent_from_checkpoint(const json& j) {
  if (j.value("format_version", std::string{}) != kCheckpointFormat) {
    throw ConfigError("unsupported checkpoint format '" + j.value("format_version", std::string{}) + "'");
  }
  LoadedCheckpoint out;
  out.config = config_from_json(j.at("config"));
  out.env_step = j.at("env_step").get<long>();
  const TrainConfig& c = out.config.train;
  const EnvSpec spec = Environment::make(c.env).spec();
  out.agent.policy = DiffusionPolicy(spec.state_dim, spec.action_box,
                                     make_schedule(c.diffusion_steps, c.beta_min, c.beta_max),
                                     mlp_from_json(j.at("policy")));
  std::vector<Mlp> nets;
  for (const auto& n : j.at("critic")) nets.push_back(mlp_from_json(n));
  out.agent.critic = CriticEnsemble(spec.state_dim, spec.action_dim, c.effective_critic(), std::move(nets));
  const auto& t = j.at("critic_target");
  if (t.size() != out.agent.critic.target_nets().size()) throw DimensionError("checkpoint target critic count mismatch");
  for (std::size_t i = 0; i < t.size(); ++i) out.agent.critic.target_nets()[i] = mlp_from_json(t[i]);
  out.agent.value = ValueNet(mlp_from_json(j.at("value")), c.value_lr);
  out.probe_states = tensor_from_json(j.at("probe_states"));
  return out;
}

/// Delta_Q of the sampling checkpoints against the guided gap of the CGPO
/// checkpoints, at the env steps both runs saved.
inline DeltaQReport contrast_report(const std::vector<LoadedCheckpoint>& sampling,
                                    const std::vector<LoadedCheckpoint>& guided) {
  std::map<long, const LoadedCheckpoint*> by_step;
  for (const auto& g : guided) by_step[g.env_step] = &g;
  std::map<long, const LoadedCheckpoint*> ordered;
  for (const auto& s : sampling) ordered[s.env_step] = &s;
  DeltaQReport report;
  for (const auto& [step, s] : ordered) {
    auto it = by_step.find(step);
    if (it == by_step.end() || s->probe_states.size() == 0 || it->second->probe_states.size() == 0) continue;
    const LoadedCheckpoint& g = *it->second;
    report.env_step.push_back(step);
    report.delta_q.push_back(snapshot_contrast(s->agent, s->config.train, s->probe_states, step).delta_q);
    report.guided_gap.push_back(snapshot_contrast(g.agent, g.config.train, g.probe_states, step).guided_gap);
    report.states = s->probe_states.rows();
    report.candidates = s->config.train.contrast_candidates;
  }
  return report;
}

}  // namespace cgpo
