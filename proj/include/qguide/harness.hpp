#pragma once

// Collect/train/evaluate loop for one (config, seed) pair.

#include <chrono>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "qguide/config.hpp"
#include "qguide/env.hpp"
#include "qguide/guidance.hpp"
#include "qguide/guide.hpp"
#include "qguide/metrics.hpp"
#include "qguide/replay.hpp"
#include "qguide/td3.hpp"

namespace qguide {

/// Fraction of test episodes in which `policy` reaches the goal at some step
/// before the time limit.
template <typename Policy>
double evaluate_policy(Policy&& policy, const GoalEnvSpec& spec, const std::vector<std::uint64_t>& test_set) {
  if (test_set.empty()) throw ConfigError("evaluation needs a non-empty test set");
  GoalEnv env(spec);
  int successes = 0;
  for (const auto seed : test_set) {
    Observation obs = env.reset(seed);
    bool success = false;
    while (!env.done()) {
      const StepResult r = env.step(policy(obs));
      success = success || r.success;
      obs = r.next_observation;
    }
    successes += success ? 1 : 0;
  }
  return static_cast<double>(successes) / static_cast<double>(test_set.size());
}

/// Deterministic policy, no exploration noise.
inline double evaluate(const Td3Agent& agent, const GoalEnvSpec& spec, const std::vector<std::uint64_t>& test_set) {
  return evaluate_policy([&](const Observation& o) { return agent.act(o); }, spec, test_set);
}

struct RunOptions {
  /// Use this Q^G instead of loading config.guide_q_path().
  std::shared_ptr<const GuideQ> guide_q;
  /// Write metrics here instead of run_dir()/seed_<k>.csv.
  std::filesystem::path metrics_path;
  bool quiet = true;
};

struct RunResult {
  std::filesystem::path metrics_path;
  std::vector<MetricsRow> rows;
};

inline std::filesystem::path default_metrics_path(const ExperimentConfig& config, std::uint64_t seed) {
  return config.run_dir() / ("seed_" + std::to_string(seed) + ".csv");
}

inline std::shared_ptr<const GuideQ> load_guide_q_for(const ExperimentConfig& config) {
  const auto path = config.guide_q_path();
  if (!std::filesystem::exists(path))
    throw ConfigError("guide Q file " + path.string() + " not found; run pretrain-guide first");
  auto g = std::make_shared<const GuideQ>(load_guide_q(path, config.env_spec.action_bound, config.td3.gamma));
  return g;
}

/// Runs the full schedule: collect train_every environment steps with the
/// behaviour policy (episodes stored with the guide's actions), then
/// gradient_steps TD3 updates; evaluate on the fixed test set every
/// eval_every steps and append one metrics row. Deterministic given seed.
inline RunResult run_experiment(const ExperimentConfig& config, std::uint64_t seed, const RunOptions& opts = {}) {
  config.validate();
  const GoalEnvSpec& spec = config.env_spec;
  const GuideController& guide = config.guide;
  const GuidanceConfig gcfg = config.guidance();

  std::shared_ptr<const GuideQ> guide_q = opts.guide_q;
  if (!guide_q && needs_guide_q(gcfg)) guide_q = load_guide_q_for(config);

  Td3Agent agent(spec, config.td3, detail::splitmix64(seed ^ 0xA9E47ull));
  if (gcfg.init_from_qg) {
    if (!guide_q) throw ConfigError("init_from_qg requires a guide Q-function");
    init_agent_from_guide_q(agent, *guide_q);
  }

  const bool uses_guide_actions = gcfg.variant != GuidanceVariant::none;
  ReplayBuffer buffer(static_cast<std::size_t>(config.buffer_capacity), spec.goal_tolerance);
  std::mt19937_64 rng(detail::splitmix64(seed ^ 0x5EEDull));
  std::uint64_t episode_stream = detail::splitmix64(seed ^ 0xE915ull);
  const auto test_set = make_test_set(spec, config.test_set_size, config.test_set_seed);
  const ExplorationNoise noise = config.exploration();

  RunResult result;
  result.metrics_path = opts.metrics_path.empty() ? default_metrics_path(config, seed) : opts.metrics_path;
  {
    auto sidecar = result.metrics_path;
    sidecar.replace_extension(".config");
    save_config(sidecar, config);
  }
  MetricsWriter writer(result.metrics_path);

  GoalEnv env(spec);
  Observation obs = env.reset(episode_stream = detail::splitmix64(episode_stream));
  std::int64_t episode_id = 0;
  std::vector<Transition> episode;

  const auto started = std::chrono::steady_clock::now();
  std::int64_t t = 0;
  double critic_sum = 0.0, actor_sum = 0.0, bc_sum = 0.0, filter_sum = 0.0;
  std::int64_t critic_n = 0, actor_n = 0;

  while (t < config.total_steps) {
    const std::int64_t round_end = std::min(config.total_steps, t + config.train_every);
    for (; t < round_end; ++t) {
      Transition tr;
      tr.state = obs.state;
      tr.achieved_goal = obs.achieved_goal;
      tr.desired_goal = obs.desired_goal;
      tr.action = agent.behaviour_action(obs, noise, rng);
      if (uses_guide_actions) tr.guide_action = guide_action(guide, obs);
      const StepResult s = env.step(tr.action);
      tr.reward = s.reward;
      tr.next_state = s.next_observation.state;
      tr.achieved_goal_next = s.next_observation.achieved_goal;
      tr.timeout = s.timeout;
      tr.terminal = s.success && spec.terminate_on_success;
      tr.episode_id = episode_id;
      tr.step_index = static_cast<int>(episode.size());
      episode.push_back(std::move(tr));
      obs = s.next_observation;
      if (env.done()) {
        buffer.store_episode(std::move(episode));
        episode.clear();
        ++episode_id;
        obs = env.reset(episode_stream = detail::splitmix64(episode_stream));
      }
    }

    if (buffer.size() > 0) {
      for (int g = 0; g < config.gradient_steps; ++g) {
        const Batch batch = Batch::from(
            buffer.sample_batch(config.batch_size, config.her, rng, uses_guide_actions ? &guide : nullptr));
        FilterStats stats;
        const GuidanceHook hook = make_guidance_hook(gcfg, guide_q.get(), agent, t, &stats);
        TrainStepResult r;
        try {
          r = agent.train_step(batch, rng, hook);
        } catch (const NumericalError& e) {
          throw NumericalError(std::string(e.what()) + " (env step " + std::to_string(t) +
                               "; metrics so far in " + result.metrics_path.string() + ")");
        }
        critic_sum += r.critic_loss;
        ++critic_n;
        if (r.actor_updated) {
          actor_sum += r.actor.loss;
          bc_sum += stats.bc_loss_value;
          filter_sum += stats.pass_fraction;
          ++actor_n;
        }
      }
    }

    if (t % config.eval_every == 0 || t == config.total_steps) {
      MetricsRow row;
      row.env_steps = t;
      row.success_rate = evaluate(agent, spec, test_set);
      row.mean_critic_loss = critic_n ? critic_sum / critic_n : 0.0;
      row.mean_actor_loss = actor_n ? actor_sum / actor_n : 0.0;
      row.mean_bc_loss = actor_n ? bc_sum / actor_n : 0.0;
      row.mean_filter_fraction = actor_n ? filter_sum / actor_n : 0.0;
      row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      writer.append(row);
      result.rows.push_back(row);
      if (!opts.quiet)
        std::fprintf(stderr, "[%s/%s seed %llu] step %lld success %.2f filter %.3f bc %.4f critic %.4f\n",
                     to_string(config.env).c_str(), to_string(config.variant).c_str(),
                     static_cast<unsigned long long>(seed), static_cast<long long>(t), row.success_rate,
                     row.mean_filter_fraction, row.mean_bc_loss, row.mean_critic_loss);
      critic_sum = actor_sum = bc_sum = filter_sum = 0.0;
      critic_n = actor_n = 0;
    }
  }

  if (config.save_agent) {
    auto dir = result.metrics_path;
    dir.replace_extension("");
    agent.save(dir.string() + "_agent");
  }
  return result;
}

/// Fits Q^G for the configured environment and guide and writes it to `out`.
inline PretrainReport pretrain_and_save(const ExperimentConfig& config, std::int64_t steps,
                                        const std::filesystem::path& out) {
  PretrainConfig p = config.pretrain_config();
  p.budget_steps = steps;
  PretrainReport report;
  const GuideQ q = pretrain_guide_q(config.env_spec, config.guide, p, &report);
  save_guide_q(out, q);
  return report;
}

}  // namespace qguide
