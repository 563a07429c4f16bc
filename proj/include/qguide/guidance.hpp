#pragma once

// Behaviour cloning towards a guiding controller, gated by a Q-filter.
//
// The filter compares the value of the guide's action against the value of
// the policy's own action. The static variant takes the left-hand side from
// Q^G, a frozen Q-function fitted to the guide's own behaviour; the naive
// variant takes both sides from the learner's critic 1.

#include <cmath>
#include <cstdint>
#include <iostream>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "qguide/env.hpp"
#include "qguide/guide.hpp"
#include "qguide/replay.hpp"
#include "qguide/td3.hpp"

namespace qguide {

enum class GuidanceVariant { static_qg, naive, linear, none, static_qg_no_bc, naive_with_init };

inline std::string to_string(GuidanceVariant v) {
  switch (v) {
    case GuidanceVariant::static_qg: return "static_qg";
    case GuidanceVariant::naive: return "naive";
    case GuidanceVariant::linear: return "linear";
    case GuidanceVariant::none: return "none";
    case GuidanceVariant::static_qg_no_bc: return "static_qg_no_bc";
    case GuidanceVariant::naive_with_init: return "naive_with_init";
  }
  return "?";
}

inline GuidanceVariant parse_variant(std::string_view s) {
  for (auto v : {GuidanceVariant::static_qg, GuidanceVariant::naive, GuidanceVariant::linear,
                 GuidanceVariant::none, GuidanceVariant::static_qg_no_bc,
                 GuidanceVariant::naive_with_init})
    if (s == to_string(v)) return v;
  throw ConfigError("unknown guidance variant '" + std::string(s) + "'");
}

enum class FilterRule { guide_q, learner_q, always, never };

inline FilterRule filter_rule(GuidanceVariant v) {
  switch (v) {
    case GuidanceVariant::static_qg:
    case GuidanceVariant::static_qg_no_bc: return FilterRule::guide_q;
    case GuidanceVariant::naive:
    case GuidanceVariant::naive_with_init: return FilterRule::learner_q;
    case GuidanceVariant::linear: return FilterRule::always;
    case GuidanceVariant::none: return FilterRule::never;
  }
  return FilterRule::never;
}

struct GuidanceConfig {
  GuidanceVariant variant = GuidanceVariant::none;
  double bc_weight = 2.0;
  std::int64_t linear_T = 500000;
  bool init_from_qg = false;

  void validate() const {
    if (!(bc_weight >= 0.0)) throw ConfigError("bc_weight must be non-negative");
    if (variant == GuidanceVariant::linear && linear_T <= 0)
      throw ConfigError("linear_T must be positive for the linear schedule");
  }
};

/// Defaults per variant: critics start from Q^G for static_qg,
/// static_qg_no_bc and naive_with_init.
inline GuidanceConfig make_guidance_config(GuidanceVariant v) {
  GuidanceConfig c;
  c.variant = v;
  c.init_from_qg = v == GuidanceVariant::static_qg || v == GuidanceVariant::static_qg_no_bc ||
                   v == GuidanceVariant::naive_with_init;
  return c;
}

inline bool needs_guide_q(const GuidanceConfig& c) {
  return filter_rule(c.variant) == FilterRule::guide_q || c.init_from_qg;
}

/// Frozen Q-function of the guiding controller. Values are clipped to the
/// achievable return range [q_min, 0].
class GuideQ {
 public:
  GuideQ(Mlp net, double action_bound, double q_min)
      : net_(std::move(net)), action_bound_(action_bound), q_min_(q_min) {}

  const Mlp& network() const { return net_; }
  double action_bound() const { return action_bound_; }
  double q_min() const { return q_min_; }

  Matrix values(const Matrix& features, const Matrix& actions) const {
    Matrix x(features.rows() + actions.rows(), features.cols());
    x << features, actions / action_bound_;
    return net_.forward(x).cwiseMax(q_min_).cwiseMin(0.0);
  }

 private:
  const Mlp net_;
  double action_bound_;
  double q_min_;
};

struct FilterStats {
  double pass_fraction = 0.0;
  double bc_loss_value = 0.0;
};

/// Strict inequality, ties do not pass.
inline std::vector<char> filter_from_values(const Matrix& guide_value, const Matrix& policy_value) {
  std::vector<char> mask(static_cast<std::size_t>(guide_value.cols()));
  for (Eigen::Index i = 0; i < guide_value.cols(); ++i)
    mask[static_cast<std::size_t>(i)] = guide_value(0, i) > policy_value(0, i);
  return mask;
}

inline std::vector<char> q_filter_mask(const GuidanceConfig& cfg, const Matrix& features,
                                       const Matrix& guide_actions, const Matrix& policy_q,
                                       const GuideQ* guide_q, const Td3Agent& agent) {
  const auto n = static_cast<std::size_t>(features.cols());
  switch (filter_rule(cfg.variant)) {
    case FilterRule::always: return std::vector<char>(n, 1);
    case FilterRule::never: return std::vector<char>(n, 0);
    case FilterRule::guide_q:
      if (!guide_q) throw ConfigError("this guidance variant needs a guide Q-function");
      return filter_from_values(guide_q->values(features, guide_actions), policy_q);
    case FilterRule::learner_q:
      return filter_from_values(agent.critic1().forward(agent.critic_input(features, guide_actions)),
                                policy_q);
  }
  return std::vector<char>(n, 0);
}

/// Mask for a batch given the agent's current actor and critic 1.
inline std::vector<char> q_filter_mask(const GuidanceConfig& cfg, const Batch& batch,
                                       const GuideQ* guide_q, const Td3Agent& agent) {
  const Matrix f = make_features(batch.state, batch.goal, batch.achieved);
  const Matrix a = agent.actor().forward(f);
  const Matrix q = agent.critic1().forward(agent.critic_input(f, a));
  return q_filter_mask(cfg, f, batch.guide_action, q, guide_q, agent);
}

inline double bc_coefficient(const GuidanceConfig& cfg, std::int64_t env_steps) {
  if (env_steps < 0) throw ConfigError("env_steps must be non-negative");
  switch (cfg.variant) {
    case GuidanceVariant::static_qg:
    case GuidanceVariant::naive:
    case GuidanceVariant::naive_with_init: return cfg.bc_weight;
    case GuidanceVariant::linear: {
      const double frac = static_cast<double>(env_steps) / static_cast<double>(cfg.linear_T);
      return cfg.bc_weight * std::max(0.0, 1.0 - frac);
    }
    case GuidanceVariant::none:
    case GuidanceVariant::static_qg_no_bc: return 0.0;
  }
  return 0.0;
}

struct BcLoss {
  double value = 0.0;
  Matrix action_grad;  // dL/d(policy action), same shape as the actions
  FilterStats stats;
};

/// coefficient * (1/N) * sum_i mask_i * ||guide_i - policy_i||_2.
/// The gradient at a zero difference is taken as zero.
inline BcLoss bc_loss(const Matrix& guide_actions, const std::vector<char>& mask, double coefficient,
                      const Matrix& policy_actions) {
  const auto n = policy_actions.cols();
  if (static_cast<Eigen::Index>(mask.size()) != n || guide_actions.cols() != n ||
      guide_actions.rows() != policy_actions.rows())
    throw ConfigError("bc_loss: mask / action shape mismatch");
  BcLoss out;
  out.action_grad = Matrix::Zero(policy_actions.rows(), n);
  std::size_t passed = 0;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    ++passed;
    const Vector diff = guide_actions.col(i) - policy_actions.col(i);
    const double dist = diff.norm();
    sum += dist;
    if (dist > 0.0) out.action_grad.col(i) = -(coefficient / n) * diff / dist;
  }
  out.value = coefficient * sum / static_cast<double>(n);
  out.stats.pass_fraction = static_cast<double>(passed) / static_cast<double>(n);
  out.stats.bc_loss_value = out.value;
  return out;
}

/// Copies Q^G into both online critics and both target critics.
inline void init_agent_from_guide_q(Td3Agent& agent, const GuideQ& guide_q) {
  if (!agent.critic1().same_architecture(guide_q.network()))
    throw ConfigError("guide Q-network architecture does not match the agent's critics");
  agent.load_critics(guide_q.network());
}

/// Actor-loss hook for one training step. Writes the filter statistics of the
/// batch into `stats` when given. Returns an empty hook for variant none.
inline GuidanceHook make_guidance_hook(const GuidanceConfig& cfg, const GuideQ* guide_q,
                                       const Td3Agent& agent, std::int64_t env_steps,
                                       FilterStats* stats) {
  if (cfg.variant == GuidanceVariant::none) {
    if (stats) *stats = FilterStats{};
    return {};
  }
  const double coefficient = bc_coefficient(cfg, env_steps);
  return [cfg, guide_q, &agent, coefficient, stats](const PolicyEvaluation& ev) {
    const auto mask = q_filter_mask(cfg, ev.features, ev.batch.guide_action, ev.policy_q, guide_q, agent);
    BcLoss bc = bc_loss(ev.batch.guide_action, mask, coefficient, ev.policy_actions);
    if (stats) *stats = bc.stats;
    ActionPenalty p;
    p.value = bc.value;
    if (coefficient > 0.0) p.action_grad = std::move(bc.action_grad);
    return p;
  };
}

// ---------------------------------------------------------------------------
// Fitting Q^G

enum class GuideQMethod { sarsa, monte_carlo };

struct PretrainConfig {
  std::int64_t budget_steps = 50000;
  int train_every = 1000;
  int gradient_steps = 1000;
  int batch_size = 100;
  Td3Params net;                   // hidden sizes, gamma, learning rate, polyak
  double exploration_sigma = 0.1;  // fraction of action_bound
  HerParams her;
  GuideQMethod method = GuideQMethod::sarsa;
  std::size_t buffer_capacity = 200000;
  int holdout_episodes = 20;
  std::uint64_t seed = 0;
};

struct PretrainReport {
  std::vector<std::int64_t> checkpoints;  // env steps at each training round
  std::vector<double> holdout_residuals;  // mean squared TD error on held-out guide data
  double collection_success_rate = 0.0;   // fraction of collected episodes that succeeded
  bool reached_goal = false;
};

namespace detail {

struct Rollout {
  std::vector<Transition> transitions;
  bool success = false;
};

inline Rollout run_guide_episode(GoalEnv& env, const GuideController& guide, std::uint64_t episode_seed,
                                 std::int64_t episode_id, double sigma, std::mt19937_64& rng,
                                 std::int64_t max_steps) {
  Rollout r;
  Observation obs = env.reset(episode_seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double bound = env.spec().action_bound;
  while (!env.done() && static_cast<std::int64_t>(r.transitions.size()) < max_steps) {
    Transition t;
    t.state = obs.state;
    t.achieved_goal = obs.achieved_goal;
    t.desired_goal = obs.desired_goal;
    t.guide_action = guide_action(guide, obs);
    t.action = t.guide_action;
    if (sigma > 0.0)
      for (Eigen::Index i = 0; i < t.action.size(); ++i) t.action(i) += sigma * bound * gauss(rng);
    t.action = t.action.cwiseMax(-bound).cwiseMin(bound);
    const StepResult s = env.step(t.action);
    t.reward = s.reward;
    t.next_state = s.next_observation.state;
    t.achieved_goal_next = s.next_observation.achieved_goal;
    t.timeout = s.timeout;
    t.terminal = s.success && env.spec().terminate_on_success;
    t.episode_id = episode_id;
    t.step_index = static_cast<int>(r.transitions.size());
    r.success = r.success || s.success;
    obs = s.next_observation;
    r.transitions.push_back(std::move(t));
  }
  return r;
}

inline Matrix guide_next_actions(const GuideController& guide, const Batch& b) {
  Matrix out(b.action.rows(), b.size());
  for (int i = 0; i < b.size(); ++i)
    out.col(i) = guide_action(guide, Observation{b.next_state.col(i), b.next_achieved.col(i), b.goal.col(i)});
  return out;
}

}  // namespace detail

/// 1-step SARSA target for the guide: r + gamma * Q(s', guide(s', g)),
/// no bootstrap on success terminals, clipped to [q_min, 0].
inline Vector guide_sarsa_targets(const Mlp& q, const GuideController& guide, const Batch& b,
                                  double gamma, double action_bound) {
  const Matrix next_f = make_features(b.next_state, b.goal, b.next_achieved);
  const Matrix next_a = detail::guide_next_actions(guide, b);
  Matrix x(next_f.rows() + next_a.rows(), next_f.cols());
  x << next_f, next_a / action_bound;
  const Matrix qn = q.forward(x);
  Vector y(b.size());
  for (int i = 0; i < b.size(); ++i) {
    const double boot = b.terminal[static_cast<std::size_t>(i)] ? 0.0 : qn(0, i);
    y(i) = std::clamp(b.reward(i) + gamma * boot, min_return(gamma), 0.0);
  }
  return y;
}

/// Fits Q^G to data gathered by running the guide with small Gaussian
/// exploration noise; returns the frozen network.
inline GuideQ pretrain_guide_q(const GoalEnvSpec& spec, const GuideController& guide,
                               const PretrainConfig& cfg, PretrainReport* report = nullptr) {
  if (cfg.budget_steps <= 0) throw ConfigError("pretraining budget must be positive");
  if (cfg.train_every <= 0 || cfg.gradient_steps < 0 || cfg.batch_size <= 0)
    throw ConfigError("invalid pretraining schedule");
  cfg.net.validate();
  const double gamma = cfg.net.gamma;
  const double bound = spec.action_bound;

  std::mt19937_64 rng(cfg.seed);
  // Reuse the agent's critic architecture so Q^G can initialise its critics.
  Td3Agent shape(spec, cfg.net, rng());
  Mlp q = shape.critic1();
  Mlp q_target = q;
  AdamState opt(q, AdamParams{cfg.net.learning_rate});

  GoalEnv env(spec);
  std::int64_t episode_id = 0;
  std::uint64_t episode_seed_state = detail::splitmix64(cfg.seed ^ 0x9A1DEull);
  auto next_episode_seed = [&] { return episode_seed_state = detail::splitmix64(episode_seed_state); };

  std::vector<Transition> holdout;
  for (int e = 0; e < cfg.holdout_episodes; ++e) {
    auto r = detail::run_guide_episode(env, guide, next_episode_seed(), -1 - e, 0.0, rng, spec.time_limit);
    holdout.insert(holdout.end(), r.transitions.begin(), r.transitions.end());
  }
  const std::optional<Batch> holdout_batch =
      holdout.empty() ? std::nullopt : std::optional<Batch>(Batch::from(holdout));

  ReplayBuffer buffer(cfg.buffer_capacity, spec.goal_tolerance);
  std::vector<std::pair<Transition, double>> mc_pool;

  PretrainReport rep;
  std::int64_t steps = 0, episodes = 0, successes = 0;
  while (steps < cfg.budget_steps) {
    const std::int64_t round_end = std::min(cfg.budget_steps, steps + cfg.train_every);
    while (steps < round_end) {
      auto r = detail::run_guide_episode(env, guide, next_episode_seed(), episode_id++,
                                         cfg.exploration_sigma, rng, round_end - steps);
      steps += static_cast<std::int64_t>(r.transitions.size());
      ++episodes;
      successes += r.success ? 1 : 0;
      if (cfg.method == GuideQMethod::monte_carlo) {
        double ret = 0.0;
        std::vector<std::pair<Transition, double>> rev;
        for (auto it = r.transitions.rbegin(); it != r.transitions.rend(); ++it) {
          ret = it->reward + gamma * ret;
          rev.emplace_back(*it, ret);
        }
        mc_pool.insert(mc_pool.end(), rev.rbegin(), rev.rend());
      } else {
        buffer.store_episode(std::move(r.transitions));
      }
    }

    for (int g = 0; g < cfg.gradient_steps; ++g) {
      Batch b;
      Vector y;
      if (cfg.method == GuideQMethod::monte_carlo) {
        std::uniform_int_distribution<std::size_t> pick(0, mc_pool.size() - 1);
        std::vector<Transition> ts;
        y.resize(cfg.batch_size);
        for (int i = 0; i < cfg.batch_size; ++i) {
          const auto& [t, ret] = mc_pool[pick(rng)];
          ts.push_back(t);
          y(i) = std::clamp(ret, min_return(gamma), 0.0);
        }
        b = Batch::from(ts);
      } else {
        b = Batch::from(buffer.sample_batch(cfg.batch_size, cfg.her, rng, &guide));
        y = guide_sarsa_targets(q_target, guide, b, gamma, bound);
      }
      ForwardCache cache;
      const Matrix x = shape.critic_input(make_features(b.state, b.goal, b.achieved), b.action);
      const Matrix pred = q.forward(x, &cache);
      const Matrix err = pred - y.transpose();
      adam_step(q, q.backward(cache, (2.0 / b.size()) * err), opt);
      polyak_blend(q_target, q, cfg.net.polyak);
    }

    if (holdout_batch) {
      const Vector y = guide_sarsa_targets(q, guide, *holdout_batch, gamma, bound);
      const Matrix x = shape.critic_input(
          make_features(holdout_batch->state, holdout_batch->goal, holdout_batch->achieved),
          holdout_batch->action);
      rep.holdout_residuals.push_back((q.forward(x) - y.transpose()).squaredNorm() / holdout_batch->size());
      rep.checkpoints.push_back(steps);
    }
  }
  rep.collection_success_rate = episodes > 0 ? static_cast<double>(successes) / episodes : 0.0;
  rep.reached_goal = successes > 0;
  if (!rep.reached_goal)
    std::cerr << "warning: guide never reached a goal during Q^G pretraining; "
                 "the fitted values only encode the cost of following it\n";
  if (report) *report = std::move(rep);
  return GuideQ(std::move(q), bound, min_return(gamma));
}

inline void save_guide_q(const std::filesystem::path& path, const GuideQ& g) {
  save_snapshot(path, g.network(), "guide_q");
}

inline GuideQ load_guide_q(const std::filesystem::path& path, double action_bound, double gamma) {
  Snapshot s = load_snapshot(path);
  if (s.role != "guide_q") throw ConfigError(path.string() + " is not a guide Q snapshot");
  return GuideQ(std::move(s.net), action_bound, min_return(gamma));
}

}  // namespace qguide
