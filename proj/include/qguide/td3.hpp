#pragma once

// Twin-critic, delayed-update deterministic actor-critic.
//
// Network inputs are built from (state, goal, achieved goal) as
//   features = [state; goal; goal - achieved]
// and critics see [features; action / action_bound].

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <utility>
#include <vector>

#include "qguide/adam.hpp"
#include "qguide/env.hpp"
#include "qguide/replay.hpp"
#include "qguide/snapshot.hpp"

namespace qguide {

struct Td3Params {
  std::vector<int> hidden{64, 64};
  double gamma = 0.98;
  int policy_delay = 2;
  double polyak = 0.005;
  double learning_rate = 1e-3;
  double actor_l2 = 0.01;  // penalty on the actor's output pre-activations
  bool target_smoothing = true;
  double smoothing_sigma = 0.2;  // fraction of action_bound
  double smoothing_clip = 0.5;   // fraction of action_bound

  void validate() const {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
    if (policy_delay < 1) throw ConfigError("policy_delay must be >= 1");
    if (!(polyak > 0.0 && polyak <= 1.0)) throw ConfigError("polyak must lie in (0, 1]");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (actor_l2 < 0.0 || smoothing_sigma < 0.0 || smoothing_clip < 0.0)
      throw ConfigError("regularisation and smoothing parameters must be non-negative");
    for (int h : hidden)
      if (h <= 0) throw ConfigError("hidden layer sizes must be positive");
  }
};

/// Lowest achievable discounted return when every reward is -1.
inline double min_return(double gamma) {
  return gamma < 1.0 ? -1.0 / (1.0 - gamma) : -std::numeric_limits<double>::infinity();
}

struct ExplorationNoise {
  double mean = 0.0;
  double sigma = 0.1;
};

/// Column-major batch assembled from sampled transitions.
struct Batch {
  Matrix state, achieved, goal, action, guide_action, next_state, next_achieved;
  Vector reward;
  std::vector<char> terminal, timeout;

  int size() const { return static_cast<int>(reward.size()); }

  static Batch from(const std::vector<Transition>& ts) {
    if (ts.empty()) throw ConfigError("empty batch");
    const auto n = static_cast<Eigen::Index>(ts.size());
    const auto sd = ts[0].state.size(), gd = ts[0].desired_goal.size(), ad = ts[0].action.size();
    Batch b;
    b.state.resize(sd, n);
    b.next_state.resize(sd, n);
    b.achieved.resize(gd, n);
    b.next_achieved.resize(gd, n);
    b.goal.resize(gd, n);
    b.action.resize(ad, n);
    b.guide_action.resize(ad, n);
    b.reward.resize(n);
    b.terminal.resize(ts.size());
    b.timeout.resize(ts.size());
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& t = ts[static_cast<std::size_t>(i)];
      b.state.col(i) = t.state;
      b.next_state.col(i) = t.next_state;
      b.achieved.col(i) = t.achieved_goal;
      b.next_achieved.col(i) = t.achieved_goal_next;
      b.goal.col(i) = t.desired_goal;
      b.action.col(i) = t.action;
      b.guide_action.col(i) =
          t.guide_action.size() == ad ? t.guide_action : Vector(Vector::Zero(ad));
      b.reward(i) = t.reward;
      b.terminal[static_cast<std::size_t>(i)] = t.terminal;
      b.timeout[static_cast<std::size_t>(i)] = t.timeout;
    }
    return b;
  }
};

inline Matrix make_features(const Matrix& state, const Matrix& goal, const Matrix& achieved) {
  Matrix f(state.rows() + 2 * goal.rows(), state.cols());
  f << state, goal, goal - achieved;
  return f;
}

/// What the guidance hook sees during an actor update: the batch, its
/// features, the current policy actions and critic-1 values of those actions.
struct PolicyEvaluation {
  const Batch& batch;
  const Matrix& features;
  const Matrix& policy_actions;
  const Matrix& policy_q;  // 1 x N
};

/// Extra actor loss term expressed in action space.
struct ActionPenalty {
  double value = 0.0;
  Matrix action_grad;  // empty means no gradient contribution
};

using GuidanceHook = std::function<ActionPenalty(const PolicyEvaluation&)>;

struct ActorUpdateResult {
  double loss = 0.0;  // total: -Q term + guidance + regulariser
  double q_term = 0.0;
  double guidance = 0.0;
  double regularizer = 0.0;
};

struct TrainStepResult {
  double critic_loss = 0.0;
  bool actor_updated = false;
  ActorUpdateResult actor;
};

class Td3Agent {
 public:
  Td3Agent(const GoalEnvSpec& env, Td3Params params, std::uint64_t seed)
      : env_(env), params_(std::move(params)) {
    params_.validate();
    const int obs_dim = env.state_dim + 2 * env.goal_dim;
    std::vector<int> actor_sizes{obs_dim}, critic_sizes{obs_dim + env.action_dim};
    for (int h : params_.hidden) {
      actor_sizes.push_back(h);
      critic_sizes.push_back(h);
    }
    actor_sizes.push_back(env.action_dim);
    critic_sizes.push_back(1);
    std::mt19937_64 seeder(seed);
    actor_ = Mlp(actor_sizes, OutputActivation::scaled_tanh, env.action_bound, seeder());
    critic1_ = Mlp(critic_sizes, OutputActivation::identity, 1.0, seeder());
    critic2_ = Mlp(critic_sizes, OutputActivation::identity, 1.0, seeder());
    target_actor_ = actor_;
    target_critic1_ = critic1_;
    target_critic2_ = critic2_;
    const AdamParams adam{params_.learning_rate};
    actor_opt_ = AdamState(actor_, adam);
    critic1_opt_ = AdamState(critic1_, adam);
    critic2_opt_ = AdamState(critic2_, adam);
  }

  const GoalEnvSpec& env() const { return env_; }
  const Td3Params& params() const { return params_; }
  double q_min() const { return min_return(params_.gamma); }
  std::int64_t update_counter() const { return update_counter_; }

  const Mlp& actor() const { return actor_; }
  const Mlp& critic1() const { return critic1_; }
  const Mlp& critic2() const { return critic2_; }
  const Mlp& target_actor() const { return target_actor_; }
  const Mlp& target_critic1() const { return target_critic1_; }
  const Mlp& target_critic2() const { return target_critic2_; }

  /// Replaces all four critics (online and target) with copies of `q`.
  void load_critics(const Mlp& q) {
    if (!critic1_.same_architecture(q)) throw ConfigError("critic architecture mismatch");
    critic1_.copy_parameters_from(q);
    critic2_.copy_parameters_from(q);
    target_critic1_.copy_parameters_from(q);
    target_critic2_.copy_parameters_from(q);
    critic1_opt_.reset();
    critic2_opt_.reset();
  }

  void load_actor(const Mlp& actor) {
    actor_.copy_parameters_from(actor);
    target_actor_.copy_parameters_from(actor);
    actor_opt_.reset();
  }

  Matrix critic_input(const Matrix& features, const Matrix& actions) const {
    Matrix x(features.rows() + actions.rows(), features.cols());
    x << features, actions / env_.action_bound;
    return x;
  }

  Vector act(const Observation& obs) const {
    const Matrix f = make_features(obs.state, obs.desired_goal, obs.achieved_goal);
    return actor_.forward(f).col(0);
  }

  /// pi(s, g) + N(mean, sigma), clipped to the action bounds.
  Vector behaviour_action(const Observation& obs, const ExplorationNoise& noise,
                          std::mt19937_64& rng) const {
    Vector a = act(obs);
    if (noise.sigma > 0.0 || noise.mean != 0.0) {
      std::normal_distribution<double> gauss(noise.mean, noise.sigma);
      for (Eigen::Index i = 0; i < a.size(); ++i) a(i) += noise.sigma > 0.0 ? gauss(rng) : noise.mean;
    }
    return a.cwiseMax(-env_.action_bound).cwiseMin(env_.action_bound);
  }

  /// Clipped Gaussian noise for the target action (zeros when disabled).
  Matrix smoothing_noise(int n, std::mt19937_64& rng) const {
    Matrix noise = Matrix::Zero(env_.action_dim, n);
    if (!params_.target_smoothing || params_.smoothing_sigma == 0.0) return noise;
    const double bound = env_.action_bound;
    std::normal_distribution<double> gauss(0.0, params_.smoothing_sigma * bound);
    const double c = params_.smoothing_clip * bound;
    for (Eigen::Index j = 0; j < noise.cols(); ++j)
      for (Eigen::Index i = 0; i < noise.rows(); ++i) noise(i, j) = std::clamp(gauss(rng), -c, c);
    return noise;
  }

  /// y = r + gamma * (1 - terminal) * min(Q1', Q2')(s', clip(pi'(s') + noise)),
  /// clipped to [q_min, 0]. Timeouts bootstrap; only success terminals do not.
  Vector critic_targets(const Batch& b, const Matrix& noise) const {
    const Matrix next_f = make_features(b.next_state, b.goal, b.next_achieved);
    Matrix next_a = target_actor_.forward(next_f) + noise;
    next_a = next_a.cwiseMax(-env_.action_bound).cwiseMin(env_.action_bound);
    const Matrix x = critic_input(next_f, next_a);
    const Matrix q1 = target_critic1_.forward(x);
    const Matrix q2 = target_critic2_.forward(x);
    Vector y(b.size());
    for (int i = 0; i < b.size(); ++i) {
      const double boot = b.terminal[static_cast<std::size_t>(i)] ? 0.0 : std::min(q1(0, i), q2(0, i));
      y(i) = std::clamp(b.reward(i) + params_.gamma * boot, q_min(), 0.0);
    }
    return y;
  }

  Vector critic_targets(const Batch& b, std::mt19937_64& rng) const {
    return critic_targets(b, smoothing_noise(b.size(), rng));
  }

  /// One Adam step per critic on mean squared error; returns the mean of the
  /// two pre-update losses.
  double critic_update(const Batch& b, const Vector& y) {
    const Matrix x = critic_input(make_features(b.state, b.goal, b.achieved), b.action);
    const double n = b.size();
    double total = 0.0;
    for (int k = 0; k < 2; ++k) {
      Mlp& critic = k == 0 ? critic1_ : critic2_;
      AdamState& opt = k == 0 ? critic1_opt_ : critic2_opt_;
      ForwardCache cache;
      const Matrix q = critic.forward(x, &cache);
      const Matrix err = q - y.transpose();
      total += err.squaredNorm() / n;
      const GradBundle g = critic.backward(cache, (2.0 / n) * err);
      adam_step(critic, g, opt);
    }
    const double loss = 0.5 * total;
    if (!std::isfinite(loss)) throw NumericalError("critic loss is not finite");
    return loss;
  }

  /// Loss terms and actor parameter gradient of
  ///   mean[-Q1(s, pi(s))] + guidance + actor_l2 * mean ||z||^2,
  /// z the actor's output pre-activations. No parameters change.
  std::pair<ActorUpdateResult, GradBundle> actor_gradient(const Batch& b,
                                                          const GuidanceHook& guidance = {}) const {
    const double n = b.size();
    const Matrix f = make_features(b.state, b.goal, b.achieved);
    ForwardCache actor_cache;
    const Matrix a = actor_.forward(f, &actor_cache);
    ForwardCache critic_cache;
    const Matrix q = critic1_.forward(critic_input(f, a), &critic_cache);
    const GradBundle critic_grad = critic1_.backward(critic_cache, Matrix::Ones(1, b.size()));
    Matrix d_action = -(1.0 / n) * critic_grad.input_grad.bottomRows(env_.action_dim) / env_.action_bound;

    ActorUpdateResult r;
    r.q_term = -q.sum() / n;
    if (guidance) {
      const ActionPenalty pen = guidance(PolicyEvaluation{b, f, a, q});
      r.guidance = pen.value;
      if (pen.action_grad.size() > 0) {
        if (pen.action_grad.rows() != d_action.rows() || pen.action_grad.cols() != d_action.cols())
          throw ConfigError("guidance gradient has the wrong shape");
        d_action += pen.action_grad;
      }
    }
    const Matrix& z = actor_cache.pre.back();
    r.regularizer = params_.actor_l2 * z.squaredNorm() / n;
    const Matrix dz = (2.0 * params_.actor_l2 / n) * z;
    r.loss = r.q_term + r.guidance + r.regularizer;
    if (!std::isfinite(r.loss)) throw NumericalError("actor loss is not finite");
    return {r, actor_.backward(actor_cache, d_action, &dz)};
  }

  /// One Adam step on the actor loss of actor_gradient().
  ActorUpdateResult actor_update(const Batch& b, const GuidanceHook& guidance = {}) {
    auto [r, g] = actor_gradient(b, guidance);
    adam_step(actor_, g, actor_opt_);
    return r;
  }

  void soft_update() {
    polyak_blend(target_actor_, actor_, params_.polyak);
    polyak_blend(target_critic1_, critic1_, params_.polyak);
    polyak_blend(target_critic2_, critic2_, params_.polyak);
  }

  /// Critic step every call; actor step and target update every
  /// policy_delay-th call.
  TrainStepResult train_step(const Batch& b, std::mt19937_64& rng, const GuidanceHook& guidance = {}) {
    TrainStepResult r;
    const Vector y = critic_targets(b, rng);
    r.critic_loss = critic_update(b, y);
    ++update_counter_;
    if (update_counter_ % params_.policy_delay == 0) {
      r.actor = actor_update(b, guidance);
      r.actor_updated = true;
      soft_update();
    }
    return r;
  }

  void save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    save_snapshot(dir / "actor.qgnn", actor_, "actor");
    save_snapshot(dir / "critic1.qgnn", critic1_, "critic1");
    save_snapshot(dir / "critic2.qgnn", critic2_, "critic2");
    save_snapshot(dir / "target_actor.qgnn", target_actor_, "target_actor");
    save_snapshot(dir / "target_critic1.qgnn", target_critic1_, "target_critic1");
    save_snapshot(dir / "target_critic2.qgnn", target_critic2_, "target_critic2");
  }

  void load(const std::filesystem::path& dir) {
    auto get = [&](const char* file, const char* role, Mlp& into) {
      Snapshot s = load_snapshot(dir / file);
      if (s.role != role) throw ConfigError(std::string("snapshot role mismatch for ") + file);
      into.copy_parameters_from(s.net);
    };
    get("actor.qgnn", "actor", actor_);
    get("critic1.qgnn", "critic1", critic1_);
    get("critic2.qgnn", "critic2", critic2_);
    get("target_actor.qgnn", "target_actor", target_actor_);
    get("target_critic1.qgnn", "target_critic1", target_critic1_);
    get("target_critic2.qgnn", "target_critic2", target_critic2_);
  }

 private:
  GoalEnvSpec env_;
  Td3Params params_;
  Mlp actor_, critic1_, critic2_;
  Mlp target_actor_, target_critic1_, target_critic2_;
  AdamState actor_opt_, critic1_opt_, critic2_opt_;
  std::int64_t update_counter_ = 0;
};

}  // namespace qguide
