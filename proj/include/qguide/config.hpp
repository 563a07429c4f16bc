#pragma once

// Experiment configuration and its flat "key = value" file format.
//
// Lines are `key = value`; blank lines and lines starting with '#' are
// ignored; unknown keys, duplicate keys and malformed values are errors.
// Lists are comma separated. Writing uses shortest round-trip number
// formatting, so parse(write(c)) == c.

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "qguide/env.hpp"
#include "qguide/guidance.hpp"
#include "qguide/guide.hpp"
#include "qguide/td3.hpp"

namespace qguide {

inline constexpr const char* kOutputRootEnvVar = "QGUIDE_OUTPUT_ROOT";

struct ExperimentConfig {
  Dynamics env = Dynamics::point_reach;
  GuidanceVariant variant = GuidanceVariant::none;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::string tag;  // optional suffix for the run directory

  std::int64_t total_steps = 100000;
  std::int64_t eval_every = 5000;
  int train_every = 1000;
  int gradient_steps = 1000;
  int batch_size = 100;
  std::int64_t buffer_capacity = 200000;

  Td3Params td3;
  double exploration_mean = 0.0;
  double exploration_sigma = 0.1;  // fraction of action_bound
  HerParams her;

  double bc_weight = 2.0;
  std::int64_t linear_T = 125000;
  std::string init_from_qg = "auto";  // auto | true | false

  int test_set_size = 100;
  std::uint64_t test_set_seed = 7;

  std::string guide_q_file;  // relative paths resolve against output_dir
  std::int64_t guide_pretrain_steps = 50000;
  GuideQMethod guide_q_method = GuideQMethod::sarsa;
  double guide_exploration_sigma = 0.1;
  std::uint64_t guide_pretrain_seed = 1234;

  std::string output_dir = "runs";
  bool save_agent = true;

  GoalEnvSpec env_spec = make_env_spec(Dynamics::point_reach);
  GuideController guide = make_guide(make_env_spec(Dynamics::point_reach));

  GuidanceConfig guidance() const {
    GuidanceConfig g = make_guidance_config(variant);
    g.bc_weight = bc_weight;
    g.linear_T = linear_T;
    if (init_from_qg == "true") g.init_from_qg = true;
    if (init_from_qg == "false") g.init_from_qg = false;
    return g;
  }

  ExplorationNoise exploration() const {
    return {exploration_mean * env_spec.action_bound, exploration_sigma * env_spec.action_bound};
  }

  /// output_dir, unless the QGUIDE_OUTPUT_ROOT environment variable is set.
  std::filesystem::path output_root() const {
    if (const char* o = std::getenv(kOutputRootEnvVar); o && *o) return o;
    return output_dir;
  }

  std::filesystem::path run_dir() const {
    std::string leaf = to_string(variant);
    if (!tag.empty()) leaf += "-" + tag;
    return output_root() / to_string(env) / leaf;
  }

  std::filesystem::path guide_q_path() const {
    std::filesystem::path p = guide_q_file.empty()
                                  ? std::filesystem::path(to_string(env) + "_guide_q.qgnn")
                                  : std::filesystem::path(guide_q_file);
    return p.is_absolute() ? p : output_root() / p;
  }

  PretrainConfig pretrain_config() const {
    PretrainConfig p;
    p.budget_steps = guide_pretrain_steps;
    p.train_every = train_every;
    p.gradient_steps = gradient_steps;
    p.batch_size = batch_size;
    p.net = td3;
    p.exploration_sigma = guide_exploration_sigma;
    p.her = her;
    p.method = guide_q_method;
    p.buffer_capacity = static_cast<std::size_t>(buffer_capacity);
    p.seed = guide_pretrain_seed;
    return p;
  }

  void validate() const {
    env_spec.validate();
    td3.validate();
    guidance().validate();
    if (env_spec.dynamics != env) throw ConfigError("env spec does not match env");
    if (seeds.empty()) throw ConfigError("seeds must not be empty");
    if (total_steps <= 0 || eval_every <= 0 || train_every <= 0 || gradient_steps < 0 ||
        batch_size <= 0 || buffer_capacity <= 0)
      throw ConfigError("step counts, batch size and capacity must be positive");
    if (eval_every % train_every != 0)
      throw ConfigError("eval_every must be a multiple of train_every");
    if (test_set_size <= 0) throw ConfigError("test_set_size must be positive");
    if (her.k < 0) throw ConfigError("her_k must be non-negative");
    if (exploration_sigma < 0.0 || guide_exploration_sigma < 0.0)
      throw ConfigError("exploration sigma must be non-negative");
    if (guide_pretrain_steps <= 0) throw ConfigError("guide_pretrain_steps must be positive");
    if (init_from_qg != "auto" && init_from_qg != "true" && init_from_qg != "false")
      throw ConfigError("init_from_qg must be auto, true or false");
  }
};

/// Desk-scale defaults: point_reach 100k steps evaluated every 5k,
/// planar_push / planar_slide 300k steps evaluated every 10k; the linear
/// schedule decays over 25 evaluation periods.
inline ExperimentConfig make_default_config(Dynamics env, GuidanceVariant variant) {
  ExperimentConfig c;
  c.env = env;
  c.variant = variant;
  c.env_spec = make_env_spec(env);
  c.guide = make_guide(c.env_spec);
  if (env == Dynamics::point_reach) {
    c.total_steps = 100000;
    c.eval_every = 5000;
  } else {
    c.total_steps = 300000;
    c.eval_every = 10000;
  }
  c.linear_T = 25 * c.eval_every;
  return c;
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError("config key '" + key + "': not a number: '" + s + "'");
  return v;
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& s) {
  Int v{};
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError("config key '" + key + "': not an integer: '" + s + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + s + "'");
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct KeyHandler {
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string& key, const std::string&)> set;
};

template <typename T>
KeyHandler number_key(T ExperimentConfig::*field) {
  return {[field](const ExperimentConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return format_double(c.*field);
            else return std::to_string(c.*field);
          },
          [field](ExperimentConfig& c, const std::string& k, const std::string& v) {
            if constexpr (std::is_floating_point_v<T>) c.*field = parse_double(k, v);
            else c.*field = parse_int<T>(k, v);
          }};
}

template <typename Owner, typename T>
KeyHandler nested_key(Owner ExperimentConfig::*owner, T Owner::*field) {
  return {[owner, field](const ExperimentConfig& c) {
            if constexpr (std::is_same_v<T, bool>) return std::string((c.*owner).*field ? "true" : "false");
            else if constexpr (std::is_floating_point_v<T>) return format_double((c.*owner).*field);
            else return std::to_string((c.*owner).*field);
          },
          [owner, field](ExperimentConfig& c, const std::string& k, const std::string& v) {
            if constexpr (std::is_same_v<T, bool>) (c.*owner).*field = parse_bool(k, v);
            else if constexpr (std::is_floating_point_v<T>) (c.*owner).*field = parse_double(k, v);
            else (c.*owner).*field = parse_int<T>(k, v);
          }};
}

/// Every accepted key, in file order. `env` must come first: it resets the
/// environment-dependent parameters that later keys may override.
inline const std::vector<std::pair<std::string, KeyHandler>>& config_keys() {
  using C = ExperimentConfig;
  static const std::vector<std::pair<std::string, KeyHandler>> keys = {
      {"env", {[](const C& c) { return to_string(c.env); },
               [](C& c, const std::string&, const std::string& v) {
                 c.env = parse_dynamics(v);
                 c.env_spec = make_env_spec(c.env);
                 c.guide = make_guide(c.env_spec);
               }}},
      {"variant", {[](const C& c) { return to_string(c.variant); },
                   [](C& c, const std::string&, const std::string& v) { c.variant = parse_variant(v); }}},
      {"tag", {[](const C& c) { return c.tag; },
               [](C& c, const std::string&, const std::string& v) { c.tag = v; }}},
      {"seeds", {[](const C& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.seeds.size(); ++i)
                     s += (i ? "," : "") + std::to_string(c.seeds[i]);
                   return s;
                 },
                 [](C& c, const std::string& k, const std::string& v) {
                   c.seeds.clear();
                   for (const auto& item : split_list(v)) c.seeds.push_back(parse_int<std::uint64_t>(k, item));
                 }}},
      {"total_steps", number_key(&C::total_steps)},
      {"eval_every", number_key(&C::eval_every)},
      {"train_every", number_key(&C::train_every)},
      {"gradient_steps", number_key(&C::gradient_steps)},
      {"batch_size", number_key(&C::batch_size)},
      {"buffer_capacity", number_key(&C::buffer_capacity)},
      {"hidden", {[](const C& c) {
                    std::string s;
                    for (std::size_t i = 0; i < c.td3.hidden.size(); ++i)
                      s += (i ? "," : "") + std::to_string(c.td3.hidden[i]);
                    return s;
                  },
                  [](C& c, const std::string& k, const std::string& v) {
                    c.td3.hidden.clear();
                    for (const auto& item : split_list(v)) c.td3.hidden.push_back(parse_int<int>(k, item));
                  }}},
      {"gamma", nested_key(&C::td3, &Td3Params::gamma)},
      {"learning_rate", nested_key(&C::td3, &Td3Params::learning_rate)},
      {"policy_delay", nested_key(&C::td3, &Td3Params::policy_delay)},
      {"polyak", nested_key(&C::td3, &Td3Params::polyak)},
      {"actor_l2", nested_key(&C::td3, &Td3Params::actor_l2)},
      {"target_smoothing", nested_key(&C::td3, &Td3Params::target_smoothing)},
      {"smoothing_sigma", nested_key(&C::td3, &Td3Params::smoothing_sigma)},
      {"smoothing_clip", nested_key(&C::td3, &Td3Params::smoothing_clip)},
      {"exploration_mean", number_key(&C::exploration_mean)},
      {"exploration_sigma", number_key(&C::exploration_sigma)},
      {"her_k", nested_key(&C::her, &HerParams::k)},
      {"her_requery_guide", nested_key(&C::her, &HerParams::requery_guide)},
      {"bc_weight", number_key(&C::bc_weight)},
      {"linear_T", number_key(&C::linear_T)},
      {"init_from_qg", {[](const C& c) { return c.init_from_qg; },
                        [](C& c, const std::string&, const std::string& v) { c.init_from_qg = v; }}},
      {"test_set_size", number_key(&C::test_set_size)},
      {"test_set_seed", number_key(&C::test_set_seed)},
      {"guide_q_file", {[](const C& c) { return c.guide_q_file; },
                        [](C& c, const std::string&, const std::string& v) { c.guide_q_file = v; }}},
      {"guide_pretrain_steps", number_key(&C::guide_pretrain_steps)},
      {"guide_q_method", {[](const C& c) {
                            return std::string(c.guide_q_method == GuideQMethod::sarsa ? "sarsa" : "monte_carlo");
                          },
                          [](C& c, const std::string& k, const std::string& v) {
                            if (v == "sarsa") c.guide_q_method = GuideQMethod::sarsa;
                            else if (v == "monte_carlo") c.guide_q_method = GuideQMethod::monte_carlo;
                            else throw ConfigError("config key '" + k + "': expected sarsa or monte_carlo");
                          }}},
      {"guide_exploration_sigma", number_key(&C::guide_exploration_sigma)},
      {"guide_pretrain_seed", number_key(&C::guide_pretrain_seed)},
      {"output_dir", {[](const C& c) { return c.output_dir; },
                      [](C& c, const std::string&, const std::string& v) { c.output_dir = v; }}},
      {"save_agent", {[](const C& c) { return std::string(c.save_agent ? "true" : "false"); },
                      [](C& c, const std::string& k, const std::string& v) { c.save_agent = parse_bool(k, v); }}},
      {"env.action_bound", nested_key(&C::env_spec, &GoalEnvSpec::action_bound)},
      {"env.goal_tolerance", nested_key(&C::env_spec, &GoalEnvSpec::goal_tolerance)},
      {"env.time_limit", nested_key(&C::env_spec, &GoalEnvSpec::time_limit)},
      {"env.terminate_on_success", nested_key(&C::env_spec, &GoalEnvSpec::terminate_on_success)},
      {"env.step_size", nested_key(&C::env_spec, &GoalEnvSpec::step_size)},
      {"env.agent_radius", nested_key(&C::env_spec, &GoalEnvSpec::agent_radius)},
      {"env.object_radius", nested_key(&C::env_spec, &GoalEnvSpec::object_radius)},
      {"env.friction", nested_key(&C::env_spec, &GoalEnvSpec::friction)},
      {"env.strike_gain", nested_key(&C::env_spec, &GoalEnvSpec::strike_gain)},
      {"env.zone_max_x", nested_key(&C::env_spec, &GoalEnvSpec::zone_max_x)},
      {"guide.gain", nested_key(&C::guide, &GuideController::gain)},
      {"guide.standoff", nested_key(&C::guide, &GuideController::standoff)},
      {"guide.contact_margin", nested_key(&C::guide, &GuideController::contact_margin)},
      {"guide.align_tolerance", nested_key(&C::guide, &GuideController::align_tolerance)},
      {"guide.windup", nested_key(&C::guide, &GuideController::windup)},
      {"guide.strike_model_error", nested_key(&C::guide, &GuideController::strike_model_error)},
  };
  return keys;
}

}  // namespace detail

/// Fully resolved config; every key is written.
inline std::string write_config(const ExperimentConfig& c) {
  std::string out;
  for (const auto& [key, h] : detail::config_keys()) out += key + " = " + h.get(c) + "\n";
  return out;
}

inline ExperimentConfig parse_config(const std::string& text) {
  std::map<std::string, std::string> values;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (!values.emplace(key, value).second) throw ConfigError("duplicate config key '" + key + "'");
  }
  const auto& keys = detail::config_keys();
  for (const auto& [key, _] : values) {
    const bool known = std::any_of(keys.begin(), keys.end(), [&](const auto& k) { return k.first == key; });
    if (!known) throw ConfigError("unknown config key '" + key + "'");
  }

  Dynamics env = Dynamics::point_reach;
  GuidanceVariant variant = GuidanceVariant::none;
  if (auto it = values.find("env"); it != values.end()) env = parse_dynamics(it->second);
  if (auto it = values.find("variant"); it != values.end()) variant = parse_variant(it->second);
  ExperimentConfig c = make_default_config(env, variant);
  for (const auto& [key, h] : keys)
    if (auto it = values.find(key); it != values.end() && key != "env") h.set(c, key, it->second);
  c.guide.env = c.env_spec;
  c.guide.action_bound = c.env_spec.action_bound;
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

inline void save_config(const std::filesystem::path& path, const ExperimentConfig& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write config " + path.string());
  out << write_config(c);
}

}  // namespace qguide
