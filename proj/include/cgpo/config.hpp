#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "cgpo/autodiff.hpp"
#include "cgpo/errors.hpp"
#include "cgpo/guidance.hpp"
#include "cgpo/trainer.hpp"

namespace cgpo {

using nlohmann::json;

/// Full run configuration: the training setup plus an optional sweep table
/// mapping dotted keys to lists of values.
struct RunConfig {
  TrainConfig train;
  json sweep = json::object();
};

/// Every accepted key with its default value. `seed` and `guidance.eta`
/// default to null.
inline json default_config_json() {
  const TrainConfig d;
  json j;
  j["env"] = d.env;
  j["seed"] = nullptr;
  j["variant"] = to_string(d.variant);
  j["train"] = {{"total_steps", d.total_steps},
                {"warmup_steps", d.warmup_steps},
                {"updates_per_step", d.updates_per_step},
                {"batch_size", d.batch_size},
                {"buffer_capacity", d.buffer_capacity},
                {"eval_interval", d.eval_interval},
                {"eval_episodes", d.eval_episodes},
                {"behavior_candidates", d.behavior_candidates},
                {"checkpoint_every_eval", d.checkpoint_every_eval}};
  j["diffusion"] = {{"steps", d.diffusion_steps},
                    {"beta_min", d.beta_min},
                    {"beta_max", d.beta_max},
                    {"hidden", d.actor_hidden},
                    {"activation", to_string(d.actor_activation)}};
  j["critic"] = {{"ensemble_size", d.critic.ensemble_size},
                 {"quantiles", d.critic.quantiles},
                 {"truncation", d.critic.truncation},
                 {"gamma", d.critic.gamma},
                 {"tau", d.critic.tau},
                 {"lr", d.critic.lr},
                 {"huber_kappa", d.critic.huber_kappa},
                 {"hidden", d.critic.hidden},
                 {"activation", to_string(d.critic.activation)},
                 {"target_candidates", d.target_candidates}};
  j["guidance"] = {{"G", d.guidance.guided_steps},
                   {"rho", d.guidance.rate},
                   {"epsilon", d.guidance.stabilizer},
                   {"mode", to_string(d.guidance.mode)},
                   {"eta", nullptr},
                   {"x0_clip", d.guidance.x0_clip_factor}};
  j["actor"] = {{"lr", d.actor.lr},
                {"lambda_ent", d.actor.entropy_weight},
                {"alpha_ent", d.actor.entropy_coef},
                {"uniform_samples", d.actor.uniform_samples}};
  j["value"] = {{"hidden", d.value_hidden}, {"activation", to_string(d.value_activation)}, {"lr", d.value_lr}};
  j["ablation"] = {{"use_ddqn", d.use_ddqn}, {"use_truncation", d.use_truncation}, {"use_valuenet", d.use_valuenet}};
  j["qvpo"] = {{"candidates", d.qvpo_candidates}};
  j["analysis"] = {{"contrast_candidates", d.contrast_candidates}, {"contrast_states", d.contrast_states}};
  j["sweep"] = json::object();
  return j;
}

namespace detail {

inline std::string join_key(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

// Overlays `user` onto `base`, rejecting keys the schema does not know.
inline void merge_checked(json& base, const json& user, const std::string& prefix) {
  if (!user.is_object()) throw ConfigError("config section '" + (prefix.empty() ? "<root>" : prefix) + "' must be an object");
  for (const auto& [key, value] : user.items()) {
    const std::string path = join_key(prefix, key);
    if (!base.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    if (path == "sweep") {
      if (!value.is_object()) throw ConfigError("config key 'sweep' must be an object of dotted keys to value lists");
      base[key] = value;
    } else if (base[key].is_object()) {
      merge_checked(base[key], value, path);
    } else {
      base[key] = value;
    }
  }
}

inline const json& at_path(const json& j, const std::string& path) {
  const json* node = &j;
  std::stringstream ss(path);
  std::string part;
  while (std::getline(ss, part, '.')) {
    if (!node->is_object() || !node->contains(part)) throw ConfigError("missing config key '" + path + "'");
    node = &(*node)[part];
  }
  return *node;
}

inline double get_double(const json& j, const std::string& path) {
  const json& v = at_path(j, path);
  if (!v.is_number()) throw ConfigError("config key '" + path + "' must be a number");
  return v.get<double>();
}

inline long get_long(const json& j, const std::string& path) {
  const json& v = at_path(j, path);
  if (!v.is_number_integer()) throw ConfigError("config key '" + path + "' must be an integer");
  return v.get<long>();
}

inline std::size_t get_count(const json& j, const std::string& path) {
  const long v = get_long(j, path);
  if (v < 0) throw ConfigError("config key '" + path + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

inline int get_int(const json& j, const std::string& path) {
  const long v = get_long(j, path);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    throw ConfigError("config key '" + path + "' is out of range");
  }
  return static_cast<int>(v);
}

inline bool get_bool(const json& j, const std::string& path) {
  const json& v = at_path(j, path);
  if (!v.is_boolean()) throw ConfigError("config key '" + path + "' must be true or false");
  return v.get<bool>();
}

inline std::string get_string(const json& j, const std::string& path) {
  const json& v = at_path(j, path);
  if (!v.is_string()) throw ConfigError("config key '" + path + "' must be a string");
  return v.get<std::string>();
}

inline std::vector<std::size_t> get_widths(const json& j, const std::string& path) {
  const json& v = at_path(j, path);
  if (!v.is_array() || v.empty()) throw ConfigError("config key '" + path + "' must be a non-empty list of widths");
  std::vector<std::size_t> out;
  for (const auto& e : v) {
    if (!e.is_number_integer() || e.get<long>() <= 0) {
      throw ConfigError("config key '" + path + "' must contain positive integers");
    }
    out.push_back(e.get<std::size_t>());
  }
  return out;
}

template <class F>
auto with_key(const std::string& path, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError("config key '" + path + "': " + e.what());
  }
}

}  // namespace detail

/// Builds a RunConfig from a (possibly partial) user document. Unknown keys,
/// wrong types and invalid values raise ConfigError naming the key.
inline RunConfig config_from_json(const json& user) {
  using namespace detail;
  json j = default_config_json();
  merge_checked(j, user, "");

  RunConfig rc;
  TrainConfig& c = rc.train;
  c.env = get_string(j, "env");
  const json& seed = at_path(j, "seed");
  if (!seed.is_null()) {
    if (!seed.is_number_unsigned()) throw ConfigError("config key 'seed' must be a non-negative integer");
    c.seed = seed.get<std::uint64_t>();
  }
  c.variant = with_key("variant", [&] { return variant_from_string(get_string(j, "variant")); });

  c.total_steps = get_long(j, "train.total_steps");
  c.warmup_steps = get_long(j, "train.warmup_steps");
  c.updates_per_step = get_int(j, "train.updates_per_step");
  c.batch_size = get_count(j, "train.batch_size");
  c.buffer_capacity = get_count(j, "train.buffer_capacity");
  c.eval_interval = get_long(j, "train.eval_interval");
  c.eval_episodes = get_int(j, "train.eval_episodes");
  c.behavior_candidates = get_count(j, "train.behavior_candidates");
  c.checkpoint_every_eval = get_bool(j, "train.checkpoint_every_eval");

  c.diffusion_steps = get_int(j, "diffusion.steps");
  c.beta_min = get_double(j, "diffusion.beta_min");
  c.beta_max = get_double(j, "diffusion.beta_max");
  c.actor_hidden = get_widths(j, "diffusion.hidden");
  c.actor_activation =
      with_key("diffusion.activation", [&] { return activation_from_string(get_string(j, "diffusion.activation")); });

  c.critic.ensemble_size = get_count(j, "critic.ensemble_size");
  c.critic.quantiles = get_count(j, "critic.quantiles");
  c.critic.truncation = get_count(j, "critic.truncation");
  c.critic.gamma = get_double(j, "critic.gamma");
  c.critic.tau = get_double(j, "critic.tau");
  c.critic.lr = get_double(j, "critic.lr");
  c.critic.huber_kappa = get_double(j, "critic.huber_kappa");
  c.critic.hidden = get_widths(j, "critic.hidden");
  c.critic.activation =
      with_key("critic.activation", [&] { return activation_from_string(get_string(j, "critic.activation")); });
  c.target_candidates = get_count(j, "critic.target_candidates");

  c.guidance.guided_steps = get_int(j, "guidance.G");
  c.guidance.rate = get_double(j, "guidance.rho");
  c.guidance.stabilizer = get_double(j, "guidance.epsilon");
  c.guidance.mode =
      with_key("guidance.mode", [&] { return guidance_mode_from_string(get_string(j, "guidance.mode")); });
  if (!at_path(j, "guidance.eta").is_null()) c.guidance.naive_step = get_double(j, "guidance.eta");
  c.guidance.x0_clip_factor = get_double(j, "guidance.x0_clip");

  c.actor.lr = get_double(j, "actor.lr");
  c.actor.entropy_weight = get_double(j, "actor.lambda_ent");
  c.actor.entropy_coef = get_double(j, "actor.alpha_ent");
  c.actor.uniform_samples = get_count(j, "actor.uniform_samples");

  c.value_hidden = get_widths(j, "value.hidden");
  c.value_activation =
      with_key("value.activation", [&] { return activation_from_string(get_string(j, "value.activation")); });
  c.value_lr = get_double(j, "value.lr");

  c.use_ddqn = get_bool(j, "ablation.use_ddqn");
  c.use_truncation = get_bool(j, "ablation.use_truncation");
  c.use_valuenet = get_bool(j, "ablation.use_valuenet");

  c.qvpo_candidates = get_count(j, "qvpo.candidates");
  c.contrast_candidates = get_count(j, "analysis.contrast_candidates");
  c.contrast_states = get_count(j, "analysis.contrast_states");

  // The variant fixes the guidance rule; an explicit contradicting mode is an error.
  if (const auto implied = variant_guidance_mode(c.variant)) {
    const bool explicit_mode = user.contains("guidance") && user["guidance"].is_object() &&
                               user["guidance"].contains("mode");
    if (explicit_mode && c.guidance.mode != *implied) {
      throw ConfigError("config key 'guidance.mode': '" + to_string(c.guidance.mode) + "' contradicts variant '" +
                        to_string(c.variant) + "' (implies '" + to_string(*implied) + "')");
    }
    c.guidance.mode = *implied;
  }

  rc.sweep = at_path(j, "sweep");
  for (const auto& [key, values] : rc.sweep.items()) {
    if (!values.is_array() || values.empty()) throw ConfigError("sweep key '" + key + "' must map to a non-empty list");
    (void)at_path(default_config_json(), key);
  }
  return rc;
}

/// Complete document for `rc`, every key present. Feeding it back through
/// config_from_json reproduces `rc`.
inline json config_to_json(const RunConfig& rc) {
  const TrainConfig& c = rc.train;
  json j = default_config_json();
  j["env"] = c.env;
  j["seed"] = c.seed ? json(*c.seed) : json(nullptr);
  j["variant"] = to_string(c.variant);
  j["train"] = {{"total_steps", c.total_steps},
                {"warmup_steps", c.warmup_steps},
                {"updates_per_step", c.updates_per_step},
                {"batch_size", c.batch_size},
                {"buffer_capacity", c.buffer_capacity},
                {"eval_interval", c.eval_interval},
                {"eval_episodes", c.eval_episodes},
                {"behavior_candidates", c.behavior_candidates},
                {"checkpoint_every_eval", c.checkpoint_every_eval}};
  j["diffusion"] = {{"steps", c.diffusion_steps},
                    {"beta_min", c.beta_min},
                    {"beta_max", c.beta_max},
                    {"hidden", c.actor_hidden},
                    {"activation", to_string(c.actor_activation)}};
  j["critic"] = {{"ensemble_size", c.critic.ensemble_size},
                 {"quantiles", c.critic.quantiles},
                 {"truncation", c.critic.truncation},
                 {"gamma", c.critic.gamma},
                 {"tau", c.critic.tau},
                 {"lr", c.critic.lr},
                 {"huber_kappa", c.critic.huber_kappa},
                 {"hidden", c.critic.hidden},
                 {"activation", to_string(c.critic.activation)},
                 {"target_candidates", c.target_candidates}};
  j["guidance"] = {{"G", c.guidance.guided_steps},
                   {"rho", c.guidance.rate},
                   {"epsilon", c.guidance.stabilizer},
                   {"mode", to_string(c.guidance.mode)},
                   {"eta", c.guidance.naive_step ? json(*c.guidance.naive_step) : json(nullptr)},
                   {"x0_clip", c.guidance.x0_clip_factor}};
  j["actor"] = {{"lr", c.actor.lr},
                {"lambda_ent", c.actor.entropy_weight},
                {"alpha_ent", c.actor.entropy_coef},
                {"uniform_samples", c.actor.uniform_samples}};
  j["value"] = {{"hidden", c.value_hidden}, {"activation", to_string(c.value_activation)}, {"lr", c.value_lr}};
  j["ablation"] = {{"use_ddqn", c.use_ddqn}, {"use_truncation", c.use_truncation}, {"use_valuenet", c.use_valuenet}};
  j["qvpo"] = {{"candidates", c.qvpo_candidates}};
  j["analysis"] = {{"contrast_candidates", c.contrast_candidates}, {"contrast_states", c.contrast_states}};
  j["sweep"] = rc.sweep;
  return j;
}

/// Parses JSON text; syntax errors become ConfigError with line and column.
inline json parse_config_text(const std::string& text, const std::string& source = "<config>") {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(source + ": " + e.what());
  }
}

inline json load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

/// Sets a dotted key inside a user document. The value is parsed as JSON
/// when possible, otherwise taken as a string. Keys under `sweep` keep their
/// remaining dots: `sweep.guidance.rho=[0.35,0.95]`.
inline void set_dotted(json& doc, const std::string& key, json value) {
  if (key.empty()) throw ConfigError("empty override key");
  json* node = &doc;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.size() > 1 && parts.front() == "sweep") {
    parts = {"sweep", key.substr(6)};
  }
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (parts[i].empty()) throw ConfigError("malformed override key '" + key + "'");
    if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
    node = &(*node)[parts[i]];
    if (node->is_null()) *node = json::object();
  }
  if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
  (*node)[parts.back()] = std::move(value);
}

inline json parse_override_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return text;
  }
}

inline void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' must have the form key=value");
  }
  set_dotted(doc, assignment.substr(0, eq), parse_override_value(assignment.substr(eq + 1)));
}

}  // namespace cgpo
