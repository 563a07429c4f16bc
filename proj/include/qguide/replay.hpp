#pragma once

// Episode-structured replay with "future" hindsight relabeling at sampling
// time.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <random>
#include <vector>

#include "qguide/env.hpp"
#include "qguide/guide.hpp"

namespace qguide {

struct Transition {
  Vector state;
  Vector achieved_goal;       // achieved goal of `state`
  Vector action;
  Vector guide_action;        // recorded at collection time
  double reward = -1.0;
  Vector next_state;
  Vector achieved_goal_next;
  Vector desired_goal;
  bool timeout = false;
  bool terminal = false;      // success termination: no bootstrapping
  std::int64_t episode_id = 0;
  int step_index = 0;

  bool relabeled = false;     // set on sampled copies only
  int goal_source_step = -1;  // step whose achieved_goal_next became the goal
};

struct HerParams {
  int k = 4;  // relabeled : original ratio, relabel probability k / (k + 1)
  /// Re-query the guide with the relabeled goal instead of reusing the
  /// action recorded for the original goal.
  bool requery_guide = true;
};

class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, double goal_tolerance)
      : capacity_(capacity), tolerance_(goal_tolerance) {
    if (capacity == 0) throw ConfigError("replay capacity must be positive");
  }

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t episode_count() const { return episodes_.size(); }
  double goal_tolerance() const { return tolerance_; }

  bool contains_episode(std::int64_t id) const {
    return std::any_of(episodes_.begin(), episodes_.end(),
                       [id](const auto& ep) { return ep.front().episode_id == id; });
  }

  /// Appends a whole episode, evicting the oldest episodes to stay within
  /// capacity.
  void store_episode(std::vector<Transition> episode) {
    if (episode.empty()) throw ConfigError("refusing to store an empty episode");
    if (episode.size() > capacity_) throw ConfigError("episode longer than replay capacity");
    const auto id = episode.front().episode_id;
    for (std::size_t t = 0; t < episode.size(); ++t)
      if (episode[t].episode_id != id || episode[t].step_index != static_cast<int>(t))
        throw ConfigError("episode transitions must share episode_id and have consecutive step_index");
    while (size_ + episode.size() > capacity_) {
      size_ -= episodes_.front().size();
      episodes_.pop_front();
    }
    size_ += episode.size();
    episodes_.push_back(std::move(episode));
    offsets_.clear();
    std::size_t running = 0;
    for (const auto& ep : episodes_) {
      offsets_.push_back(running);
      running += ep.size();
    }
  }

  /// n transitions drawn uniformly; each is relabeled with probability
  /// k/(k+1) to the achieved goal of a uniformly chosen step t' >= t of the
  /// same episode, with its reward recomputed.
  std::vector<Transition> sample_batch(int n, const HerParams& her, std::mt19937_64& rng,
                                       const GuideController* guide = nullptr) const {
    if (n <= 0) throw ConfigError("batch size must be positive");
    if (her.k < 0) throw ConfigError("HER k must be non-negative");
    if (size_ == 0) throw ConfigError("cannot sample from an empty replay buffer");
    std::uniform_int_distribution<std::size_t> pick(0, size_ - 1);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    const double relabel_p = static_cast<double>(her.k) / (her.k + 1.0);

    std::vector<Transition> batch;
    batch.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      const std::size_t flat = pick(rng);
      const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), flat) - 1;
      const auto& ep = episodes_[static_cast<std::size_t>(it - offsets_.begin())];
      const std::size_t t = flat - *it;
      Transition tr = ep[t];
      if (coin(rng) < relabel_p) {
        std::uniform_int_distribution<std::size_t> future(t, ep.size() - 1);
        const std::size_t j = future(rng);
        tr.desired_goal = ep[j].achieved_goal_next;
        tr.reward = compute_reward(tr.achieved_goal_next, tr.desired_goal, tolerance_);
        tr.relabeled = true;
        tr.goal_source_step = static_cast<int>(j);
        if (guide && her.requery_guide)
          tr.guide_action = guide_action(*guide, Observation{tr.state, tr.achieved_goal, tr.desired_goal});
      }
      batch.push_back(std::move(tr));
    }
    return batch;
  }

 private:
  std::size_t capacity_;
  double tolerance_;
  std::deque<std::vector<Transition>> episodes_;
  std::vector<std::size_t> offsets_;
  std::size_t size_ = 0;
};

}  // namespace qguide
