#pragma once

// Handcrafted guiding controllers: proportional laws wrapped in a small
// phase program that is re-evaluated from the observation at every step.
//
// point_reach: a = clip(gain * (goal - agent)). Always in the deliver phase.
//
// planar_push:
//   approach  go to the standoff point behind the box on the goal line
//             (straight line, no obstacle avoidance)
//   engage    aligned behind the box: move into it
//   deliver   aligned and touching: a = clip(gain * (goal - box))
//
// planar_slide:
//   approach  go to the wind-up point behind the puck on the goal line
//   engage    aligned: strike towards the goal at the speed an internal
//             (deliberately miscalibrated) stopping-distance model asks for
//   deliver   puck sliding or out of reach: hold still

#include <cmath>

#include "qguide/env.hpp"

namespace qguide {

enum class GuidePhase { approach, engage, deliver };

inline const char* to_string(GuidePhase p) {
  switch (p) {
    case GuidePhase::approach: return "approach";
    case GuidePhase::engage: return "engage";
    case GuidePhase::deliver: return "deliver";
  }
  return "?";
}

struct GuideController {
  GoalEnvSpec env;
  double gain = 2.0;
  double action_bound = 1.0;

  double standoff = 0.05;        // push: gap left behind the box while approaching
  double contact_margin = 0.02;  // push: distance beyond contact that counts as touching
  double align_tolerance = 0.02; // push/slide: lateral error allowed before engaging
  double windup = 0.1;           // slide: run-up distance behind the puck
  /// slide: believed-friction / true-friction; 1 would aim the strike exactly.
  double strike_model_error = 0.93;
};

inline GuideController make_guide(const GoalEnvSpec& env) {
  GuideController c;
  c.env = env;
  c.action_bound = env.action_bound;
  if (env.dynamics == Dynamics::planar_slide) c.align_tolerance = 0.006;
  return c;
}

namespace detail {

inline Eigen::Vector2d clip_action(const Eigen::Vector2d& a, double bound) {
  return a.cwiseMax(-bound).cwiseMin(bound);
}

struct GoalLineFrame {
  Eigen::Vector2d dir;   // unit vector object -> goal
  double behind = 0.0;   // agent distance behind the object along -dir
  double lateral = 0.0;  // agent distance from the goal line
  double gap = 0.0;      // agent-object distance
};

inline GoalLineFrame goal_line_frame(const Eigen::Vector2d& agent, const Eigen::Vector2d& object,
                                     const Eigen::Vector2d& goal) {
  GoalLineFrame f;
  const Eigen::Vector2d to_goal = goal - object;
  f.dir = to_goal.norm() > 1e-12 ? Eigen::Vector2d(to_goal.normalized()) : Eigen::Vector2d(1.0, 0.0);
  const Eigen::Vector2d offset = agent - object;
  f.behind = -offset.dot(f.dir);
  f.lateral = (offset + f.behind * f.dir).norm();
  f.gap = offset.norm();
  return f;
}

}  // namespace detail

inline GuidePhase guide_phase(const GuideController& c, const Observation& obs) {
  const GoalEnvSpec& env = c.env;
  if (env.dynamics == Dynamics::point_reach) return GuidePhase::deliver;
  const Eigen::Vector2d agent = obs.state.segment<2>(0);
  const Eigen::Vector2d object = obs.state.segment<2>(2);
  const Eigen::Vector2d goal = obs.desired_goal;
  const auto f = detail::goal_line_frame(agent, object, goal);
  const bool aligned = f.behind > 0.0 && f.lateral < c.align_tolerance;

  if (env.dynamics == Dynamics::planar_push) {
    if (!aligned) return GuidePhase::approach;
    return f.gap <= env.contact_distance() + c.contact_margin ? GuidePhase::deliver
                                                              : GuidePhase::engage;
  }
  const Eigen::Vector2d velocity = obs.state.segment<2>(4);
  const bool reachable = object.x() < env.zone_max_x + env.contact_distance();
  if (velocity.norm() > 0.0 || !reachable) return GuidePhase::deliver;
  return aligned && f.behind > env.contact_distance() + 0.5 * c.windup ? GuidePhase::engage
                                                                        : GuidePhase::approach;
}

inline Vector guide_action(const GuideController& c, const Observation& obs) {
  const GoalEnvSpec& env = c.env;
  const double k = c.gain;
  Eigen::Vector2d a = Eigen::Vector2d::Zero();
  if (env.dynamics == Dynamics::point_reach) {
    a = k * (obs.desired_goal - obs.state.segment<2>(0));
    return detail::clip_action(a, c.action_bound);
  }

  const Eigen::Vector2d agent = obs.state.segment<2>(0);
  const Eigen::Vector2d object = obs.state.segment<2>(2);
  const Eigen::Vector2d goal = obs.desired_goal;
  const auto f = detail::goal_line_frame(agent, object, goal);
  const GuidePhase phase = guide_phase(c, obs);

  if (env.dynamics == Dynamics::planar_push) {
    switch (phase) {
      case GuidePhase::approach:
        a = k * (object - (env.contact_distance() + c.standoff) * f.dir - agent);
        break;
      case GuidePhase::engage:
        a = k * (object - agent);
        break;
      case GuidePhase::deliver:
        a = k * (goal - object);
        break;
    }
    return detail::clip_action(a, c.action_bound);
  }

  switch (phase) {
    case GuidePhase::approach:
      a = k * (object - (env.contact_distance() + c.windup) * f.dir - agent);
      break;
    case GuidePhase::engage: {
      // Puck speed that would stop it on the goal under the believed friction.
      const double distance = (goal - object).norm();
      const double believed_friction = c.strike_model_error * env.friction;
      const double puck_speed = std::sqrt(2.0 * believed_friction * distance);
      const double agent_speed = puck_speed / env.strike_gain;
      a = (agent_speed / env.step_size) * f.dir;
      break;
    }
    case GuidePhase::deliver:
      break;
  }
  return detail::clip_action(a, c.action_bound);
}

}  // namespace qguide
