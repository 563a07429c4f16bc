#pragma once

// Goal-conditioned planar tasks with sparse rewards.
//
// All tasks live in the unit square. An action is a 2D velocity command in
// [-action_bound, action_bound]^2; the agent moves by step_size * action per
// step. Reward is 0 when the achieved goal lies in the closed tolerance ball
// around the desired goal and -1 otherwise.
//
//   point_reach   state = [agent]                         achieved = agent
//   planar_push   state = [agent, box, box - agent]       achieved = box
//   planar_slide  state = [agent, puck, puck_vel / step_size, puck - agent]
//                                                         achieved = puck
//
// planar_push: the box translates with the agent whenever the agent's new
// position overlaps it while moving towards it (sticky contact).
// planar_slide: the agent is confined to the strike zone x <= zone_max_x.
// Moving into the puck sets its velocity to strike_gain * (d . n) n, with d
// the agent displacement and n the unit vector from agent to puck. The puck
// then decelerates by `friction` per step (Coulomb law, integrated exactly)
// and stops dead at walls.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include "qguide/errors.hpp"
#include "qguide/nn.hpp"

namespace qguide {

enum class Dynamics { point_reach, planar_push, planar_slide };

inline std::string to_string(Dynamics d) {
  switch (d) {
    case Dynamics::point_reach: return "point_reach";
    case Dynamics::planar_push: return "planar_push";
    case Dynamics::planar_slide: return "planar_slide";
  }
  return "?";
}

inline Dynamics parse_dynamics(std::string_view name) {
  if (name == "point_reach") return Dynamics::point_reach;
  if (name == "planar_push") return Dynamics::planar_push;
  if (name == "planar_slide") return Dynamics::planar_slide;
  throw ConfigError("unknown environment '" + std::string(name) + "'");
}

struct GoalEnvSpec {
  Dynamics dynamics = Dynamics::point_reach;
  int state_dim = 2;
  int action_dim = 2;
  int goal_dim = 2;
  double action_bound = 1.0;
  double goal_tolerance = 0.05;
  int time_limit = 50;
  bool terminate_on_success = true;

  double step_size = 0.05;       // displacement per unit action
  double agent_radius = 0.0;
  double object_radius = 0.0;
  double friction = 0.0;         // puck deceleration per step
  double strike_gain = 0.0;
  double zone_max_x = 1.0;

  /// Offset of the achieved goal inside the state vector.
  int achieved_offset() const { return dynamics == Dynamics::point_reach ? 0 : 2; }
  double contact_distance() const { return agent_radius + object_radius; }

  void validate() const {
    if (state_dim <= 0 || action_dim <= 0 || goal_dim <= 0)
      throw ConfigError("environment dimensions must be positive");
    if (!(action_bound > 0.0) || !(goal_tolerance > 0.0) || !(step_size > 0.0))
      throw ConfigError("action_bound, goal_tolerance and step_size must be positive");
    if (time_limit <= 0) throw ConfigError("time_limit must be positive");
    if (dynamics == Dynamics::planar_slide && !(friction > 0.0))
      throw ConfigError("planar_slide needs positive friction");
  }
};

inline GoalEnvSpec make_env_spec(Dynamics d) {
  GoalEnvSpec s;
  s.dynamics = d;
  switch (d) {
    case Dynamics::point_reach:
      s.state_dim = 2;
      s.step_size = 0.05;
      break;
    case Dynamics::planar_push:
      s.state_dim = 6;
      s.step_size = 0.05;
      s.agent_radius = 0.04;
      s.object_radius = 0.06;
      break;
    case Dynamics::planar_slide:
      s.state_dim = 8;
      s.step_size = 0.08;
      s.agent_radius = 0.04;
      s.object_radius = 0.04;
      s.friction = 0.006;
      s.strike_gain = 1.5;
      s.zone_max_x = 0.4;
      break;
  }
  return s;
}

struct Observation {
  Vector state;
  Vector achieved_goal;
  Vector desired_goal;
};

struct StepResult {
  Observation next_observation;
  double reward = -1.0;
  bool success = false;
  bool timeout = false;
};

/// 0 inside the closed tolerance ball, -1 outside.
inline double compute_reward(const Vector& achieved_goal, const Vector& desired_goal,
                             double tolerance) {
  if (achieved_goal.size() != desired_goal.size())
    throw ConfigError("compute_reward: goal size mismatch");
  return (achieved_goal - desired_goal).norm() <= tolerance ? 0.0 : -1.0;
}

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline Eigen::Vector2d clamp_box(const Eigen::Vector2d& p, double lo_x, double hi_x, double lo_y,
                                 double hi_y) {
  return {std::clamp(p.x(), lo_x, hi_x), std::clamp(p.y(), lo_y, hi_y)};
}
}  // namespace detail

/// Distance the puck covers in one step when decelerating from `speed` at
/// `friction` per step, and the speed left afterwards.
inline std::pair<double, double> friction_step(double speed, double friction) {
  if (speed > friction) return {speed - 0.5 * friction, speed - friction};
  return {speed * speed / (2.0 * friction), 0.0};
}

class GoalEnv {
 public:
  explicit GoalEnv(GoalEnvSpec spec) : spec_(spec) { spec_.validate(); }

  const GoalEnvSpec& spec() const { return spec_; }
  const Observation& observation() const { return obs_; }
  int elapsed_steps() const { return steps_; }
  bool done() const { return done_; }

  /// Initial state and goal are a deterministic function of (spec, seed).
  Observation reset(std::uint64_t episode_seed) {
    std::mt19937_64 rng(detail::splitmix64(episode_seed ^ (0xA5A5ull << static_cast<int>(spec_.dynamics))));
    auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    const double tol = spec_.goal_tolerance;
    velocity_.setZero();
    switch (spec_.dynamics) {
      case Dynamics::point_reach:
        do {
          agent_ = {uni(0.05, 0.95), uni(0.05, 0.95)};
          goal_ = {uni(0.05, 0.95), uni(0.05, 0.95)};
        } while ((goal_ - agent_).norm() <= 2.0 * tol);
        break;
      case Dynamics::planar_push: {
        const double contact = spec_.contact_distance();
        object_ = {uni(0.25, 0.75), uni(0.25, 0.75)};
        do {
          goal_ = {uni(0.15, 0.85), uni(0.15, 0.85)};
        } while ((goal_ - object_).norm() <= 3.0 * tol || (goal_ - object_).norm() > 0.4);
        do {
          agent_ = {uni(0.05, 0.95), uni(0.05, 0.95)};
        } while ((agent_ - object_).norm() <= contact + 0.05 || (agent_ - object_).norm() > 0.5);
        break;
      }
      case Dynamics::planar_slide: {
        const double contact = spec_.contact_distance();
        object_ = {uni(0.15, 0.3), uni(0.3, 0.7)};
        goal_ = {uni(0.55, 0.9), uni(0.2, 0.8)};
        do {
          agent_ = {uni(spec_.agent_radius, spec_.zone_max_x), uni(0.1, 0.9)};
        } while ((agent_ - object_).norm() <= contact + 0.05);
        break;
      }
    }
    steps_ = 0;
    done_ = false;
    obs_ = make_observation();
    return obs_;
  }

  StepResult step(const Vector& action) {
    if (done_) throw ConfigError("step called on a finished episode; call reset first");
    if (action.size() != spec_.action_dim) throw ConfigError("action has wrong dimension");
    if (!action.allFinite()) throw NumericalError("non-finite action passed to environment");
    const Eigen::Vector2d a = action.cwiseMax(-spec_.action_bound).cwiseMin(spec_.action_bound);
    const Eigen::Vector2d before = agent_;

    switch (spec_.dynamics) {
      case Dynamics::point_reach:
        agent_ = detail::clamp_box(agent_ + spec_.step_size * a, 0.0, 1.0, 0.0, 1.0);
        break;
      case Dynamics::planar_push: {
        const double ra = spec_.agent_radius, ro = spec_.object_radius;
        agent_ = detail::clamp_box(agent_ + spec_.step_size * a, ra, 1.0 - ra, ra, 1.0 - ra);
        const Eigen::Vector2d moved = agent_ - before;
        const bool overlapping = (agent_ - object_).norm() < spec_.contact_distance();
        if (overlapping && moved.dot(object_ - before) > 0.0)
          object_ = detail::clamp_box(object_ + moved, ro, 1.0 - ro, ro, 1.0 - ro);
        break;
      }
      case Dynamics::planar_slide: {
        const double ra = spec_.agent_radius;
        agent_ = detail::clamp_box(agent_ + spec_.step_size * a, ra, spec_.zone_max_x, ra, 1.0 - ra);
        const Eigen::Vector2d moved = agent_ - before;
        const Eigen::Vector2d gap = object_ - agent_;
        if (gap.norm() < spec_.contact_distance() && moved.dot(object_ - before) > 0.0) {
          const Eigen::Vector2d n = gap.norm() > 1e-12 ? Eigen::Vector2d(gap.normalized())
                                                        : Eigen::Vector2d(moved.normalized());
          velocity_ = spec_.strike_gain * moved.dot(n) * n;
        }
        advance_puck();
        break;
      }
    }

    ++steps_;
    StepResult r;
    r.next_observation = make_observation();
    r.reward = compute_reward(r.next_observation.achieved_goal, goal_, spec_.goal_tolerance);
    r.success = r.reward == 0.0;
    r.timeout = steps_ >= spec_.time_limit;
    done_ = r.timeout || (r.success && spec_.terminate_on_success);
    obs_ = r.next_observation;
    return r;
  }

 private:
  void advance_puck() {
    const double speed = velocity_.norm();
    if (speed <= 0.0) return;
    const Eigen::Vector2d dir = velocity_ / speed;
    const auto [travel, remaining] = friction_step(speed, spec_.friction);
    object_ += travel * dir;
    velocity_ = remaining * dir;
    const double r = spec_.object_radius;
    const Eigen::Vector2d clamped = detail::clamp_box(object_, r, 1.0 - r, r, 1.0 - r);
    if (clamped != object_) {
      object_ = clamped;
      velocity_.setZero();
    }
  }

  Observation make_observation() const {
    Observation o;
    o.desired_goal = goal_;
    switch (spec_.dynamics) {
      case Dynamics::point_reach:
        o.state = agent_;
        o.achieved_goal = agent_;
        break;
      case Dynamics::planar_push:
        o.state.resize(6);
        o.state << agent_, object_, object_ - agent_;
        o.achieved_goal = object_;
        break;
      case Dynamics::planar_slide:
        o.state.resize(8);
        o.state << agent_, object_, velocity_ / spec_.step_size, object_ - agent_;
        o.achieved_goal = object_;
        break;
    }
    return o;
  }

  GoalEnvSpec spec_;
  Eigen::Vector2d agent_ = Eigen::Vector2d::Zero();
  Eigen::Vector2d object_ = Eigen::Vector2d::Zero();
  Eigen::Vector2d velocity_ = Eigen::Vector2d::Zero();
  Eigen::Vector2d goal_ = Eigen::Vector2d::Zero();
  Observation obs_;
  int steps_ = 0;
  bool done_ = true;
};

/// n distinct episode seeds, reproducible from `seed`.
inline std::vector<std::uint64_t> make_test_set(const GoalEnvSpec& spec, int n, std::uint64_t seed) {
  if (n <= 0) throw ConfigError("test set size must be positive");
  std::vector<std::uint64_t> seeds;
  seeds.reserve(static_cast<std::size_t>(n));
  std::uint64_t state = detail::splitmix64(seed + 0x7E57ull * (static_cast<std::uint64_t>(spec.dynamics) + 1));
  while (static_cast<int>(seeds.size()) < n) {
    state = detail::splitmix64(state);
    if (std::find(seeds.begin(), seeds.end(), state) == seeds.end()) seeds.push_back(state);
  }
  return seeds;
}

}  // namespace qguide
