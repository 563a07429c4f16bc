#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <vector>

#include "qguide/grad_check.hpp"
#include "qguide/guidance.hpp"
#include "qguide/td3.hpp"

using namespace qguide;

namespace {

Td3Params small_params() {
  Td3Params p;
  p.hidden = {16, 16};
  return p;
}

// Network whose output is the constant `c` for every input.
Mlp constant_critic(const Td3Agent& agent, double c) {
  Mlp q = agent.critic1();
  Vector p = Vector::Zero(static_cast<Eigen::Index>(q.parameter_count()));
  p(p.size() - 1) = c;
  q.set_parameters(p);
  return q;
}

Batch random_batch(const GoalEnvSpec& spec, int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0), a(-1.0, 1.0);
  std::vector<Transition> ts;
  for (int i = 0; i < n; ++i) {
    Transition t;
    t.state = Vector(spec.state_dim);
    t.next_state = Vector(spec.state_dim);
    for (int k = 0; k < spec.state_dim; ++k) {
      t.state(k) = u(rng);
      t.next_state(k) = u(rng);
    }
    t.achieved_goal = t.state.segment(spec.achieved_offset(), 2);
    t.achieved_goal_next = t.next_state.segment(spec.achieved_offset(), 2);
    t.desired_goal = Vector(2);
    t.desired_goal << u(rng), u(rng);
    t.action = Vector(2);
    t.action << a(rng), a(rng);
    t.guide_action = Vector(2);
    t.guide_action << a(rng), a(rng);
    t.reward = u(rng) < 0.3 ? 0.0 : -1.0;
    t.terminal = t.reward == 0.0 && u(rng) < 0.5;
    t.timeout = !t.terminal && u(rng) < 0.1;
    ts.push_back(t);
  }
  return Batch::from(ts);
}

Batch single(const GoalEnvSpec& spec, double reward, bool terminal, bool timeout) {
  std::mt19937_64 rng(0);
  Batch b = random_batch(spec, 1, rng);
  b.reward(0) = reward;
  b.terminal[0] = terminal;
  b.timeout[0] = timeout;
  return b;
}

// Straightforward per-sample evaluation of the clipped twin-min target.
Vector reference_targets(const Td3Agent& agent, const Batch& b, const Matrix& noise) {
  const double gamma = agent.params().gamma, bound = agent.env().action_bound;
  Vector y(b.size());
  for (int i = 0; i < b.size(); ++i) {
    const Vector g = b.goal.col(i);
    Vector f(b.state.rows() + 4);
    f << b.next_state.col(i), g, g - b.next_achieved.col(i);
    Vector a = agent.target_actor().forward(f) + noise.col(i);
    for (int k = 0; k < a.size(); ++k) a(k) = std::min(bound, std::max(-bound, a(k)));
    Vector x(f.size() + 2);
    x << f, a / bound;
    const double q = std::min(agent.target_critic1().forward(x)(0), agent.target_critic2().forward(x)(0));
    double v = b.reward(i) + (b.terminal[i] ? 0.0 : gamma * q);
    v = std::min(0.0, std::max(-1.0 / (1.0 - gamma), v));
    y(i) = v;
  }
  return y;
}

// Plain Adam on a flat parameter vector.
struct FlatAdam {
  Vector m, v;
  int t = 0;
  void step(Vector& p, const Vector& g, double lr = 1e-3) {
    if (m.size() == 0) {
      m = Vector::Zero(p.size());
      v = Vector::Zero(p.size());
    }
    ++t;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g.cwiseProduct(g);
    const Vector mh = m / (1.0 - std::pow(0.9, t)), vh = v / (1.0 - std::pow(0.999, t));
    p = p - lr * mh.cwiseQuotient((vh.cwiseSqrt().array() + 1e-8).matrix());
  }
};

Vector mse_grad(const Mlp& q, const Matrix& x, const Vector& y) {
  ForwardCache c;
  const Matrix out = q.forward(x, &c);
  return flatten(q.backward(c, (2.0 / y.size()) * (out - y.transpose())));
}

}  // namespace

TEST(CriticTargets, HandEvaluatedExamples) {
  const GoalEnvSpec spec = make_env_spec(Dynamics::point_reach);
  Td3Agent agent(spec, small_params(), 1);
  const Matrix no_noise = Matrix::Zero(2, 1);

  agent.load_critics(constant_critic(agent, -10.0));
  EXPECT_NEAR(agent.critic_targets(single(spec, -1.0, false, false), no_noise)(0), -10.8, 1e-12);
  // Timeouts still bootstrap.
  EXPECT_NEAR(agent.critic_targets(single(spec, -1.0, false, true), no_noise)(0), -10.8, 1e-12);
  // Success terminals do not.
  EXPECT_EQ(agent.critic_targets(single(spec, 0.0, true, false), no_noise)(0), 0.0);

  agent.load_critics(constant_critic(agent, -60.0));
  EXPECT_NEAR(agent.critic_targets(single(spec, -1.0, false, false), no_noise)(0), -50.0, 1e-12);
  agent.load_critics(constant_critic(agent, 3.0));
  EXPECT_EQ(agent.critic_targets(single(spec, 0.0, false, false), no_noise)(0), 0.0);
  EXPECT_NEAR(agent.q_min(), -50.0, 1e-12);
}

TEST(CriticTargets, MatchReferenceOnRandomBatches) {
  for (auto d : {Dynamics::point_reach, Dynamics::planar_slide}) {
    const GoalEnvSpec spec = make_env_spec(d);
    Td3Agent agent(spec, small_params(), 3);
    std::mt19937_64 rng(5);
    for (int i = 0; i < 6; ++i) agent.train_step(random_batch(spec, 32, rng), rng);
    for (int trial = 0; trial < 200; ++trial) {
      const Batch b = random_batch(spec, 16, rng);
      const Matrix noise = agent.smoothing_noise(b.size(), rng);
      const Vector y = agent.critic_targets(b, noise);
      ASSERT_LT((y - reference_targets(agent, b, noise)).cwiseAbs().maxCoeff(), 1e-10);
      ASSERT_LE(y.maxCoeff(), 0.0);
      ASSERT_GE(y.minCoeff(), agent.q_min());
    }
  }
}

TEST(CriticTargets, SmoothingNoiseIsClippedAndToggleable) {
  const GoalEnvSpec spec = make_env_spec(Dynamics::point_reach);
  Td3Agent agent(spec, small_params(), 2);
  std::mt19937_64 rng(3);
  const Matrix n = agent.smoothing_noise(5000, rng);
  EXPECT_LE(n.cwiseAbs().maxCoeff(), 0.5);
  EXPECT_GT(n.cwiseAbs().maxCoeff(), 0.45);
  Td3Params off = small_params();
  off.target_smoothing = false;
  Td3Agent plain(spec, off, 2);
  EXPECT_EQ(plain.smoothing_noise(10, rng), Matrix::Zero(2, 10));
}

TEST(CriticUpdate, SingleSampleLoss) {
  const GoalEnvSpec spec = make_env_spec(Dynamics::point_reach);
  Td3Agent agent(spec, small_params(), 4);
  agent.load_critics(constant_critic(agent, 0.0));
  const Batch b = single(spec, -1.0, false, false);
  EXPECT_DOUBLE_EQ(agent.critic_update(b, Vector::Constant(1, -1.0)), 1.0);
}

TEST(CriticUpdate, ExactCriticsDoNotMove) {
  const GoalEnvSpec spec = make_env_spec(Dynamics::planar_push);
  Td3Agent agent(spec, small_params(), 5);
  agent.load_critics(agent.critic1());
  std::mt19937_64 rng(1);
  const Batch b = random_batch(spec, 20, rng);
  const Matrix x = agent.critic_input(make_features(b.state, b.goal, b.achieved), b.action);
  const Vector y = agent.critic1().forward(x).row(0).transpose();
  const Vector before = agent.critic1().parameters();
  EXPECT_EQ(agent.critic_update(b, y), 0.0);
  EXPECT_EQ(agent.critic1().parameters(), before);
  EXPECT_EQ(agent.critic2().parameters(), before);
}

TEST(CriticUpdate, LossGradientMatchesFiniteDifferences) {
  const GoalEnvSpec spec = make_env_spec(Dynamics::planar_push);
  Td3Agent agent(spec, small_params(), 6);
  std::mt19937_64 rng(2);
  const Batch b = random_batch(spec, 4, rng);
  const Matrix x = agent.critic_input(make_features(b.state, b.goal, b.achieved), b.action);
  const Vector y = Vector::Constant(4, -3.0);
  Mlp probe = agent.critic1();
  auto loss = [&](const Vector& p) {
    probe.set_parameters(p);
    return (probe.forward(x).row(0).transpose() - y).squaredNorm() / 4.0;
  };
  const Vector numeric = central_difference(loss, agent.critic1().parameters(), 1e-5);
  EXPECT_LT(max_relative_error(mse_grad(agent.critic1(), x, y), numeric), 1e-4);
}

TEST(ActorUpdate, CompositeGradientMatchesFiniteDifferences) {
  const GoalEnvSpec spec = make_env_spec(Dynamics::planar_push);
  Td3Agent agent(spec, small_params(), 7);
  std::mt19937_64 rng(3);
  const Batch b = random_batch(spec, 6, rng);
  std::vector<char> mask{1, 0, 1, 1, 0, 1};
  const double coef = 2.0;
  // Filter outcome held fixed: the indicator carries no gradient.
  const GuidanceHook hook = [&](const PolicyEvaluation& ev) {
    const BcLoss bc = bc_loss(ev.batch.guide_action, mask, coef, ev.policy_actions);
    return ActionPenalty{bc.value, bc.action_grad};
  };
  const auto [res, grad] = agent.actor_gradient(b, hook);

  const Matrix f = make_features(b.state, b.goal, b.achieved);
  Mlp probe = agent.actor();
  auto loss = [&](const Vector& p) {
    probe.set_parameters(p);
    ForwardCache c;
    const Matrix a = probe.forward(f, &c);
    const double n = b.size();
    double total = -agent.critic1().forward(agent.critic_input(f, a)).sum() / n;
    for (int i = 0; i < b.size(); ++i)
      if (mask[static_cast<std::size_t>(i)]) total += coef * (b.guide_action.col(i) - a.col(i)).norm() / n;
    return total + 0.01 * c.pre.back().squaredNorm() / n;
  };
  EXPECT_NEAR(loss(agent.actor().parameters()), res.loss, 1e-12);
  const Vector numeric = central_difference(loss, agent.actor().parameters(), 1e-5);
  EXPECT_LT(max_relative_error(flatten(grad), numeric), 1e-4);
}

TEST(ActorUpdate, RegularizerVanishesAtZeroPreactivation) {
  const GoalEnvSpec spec = make_env_spec(Dynamics::point_reach);
  Td3Agent agent(spec, small_params(), 8);
  Mlp actor = agent.actor();
  actor.mutable_layers().back().weight.setZero();
  actor.mutable_layers().back().bias.setZero();
  agent.load_actor(actor);
  std::mt19937_64 rng(4);
  EXPECT_EQ(agent.actor_gradient(random_batch(spec, 10, rng)).first.regularizer, 0.0);
}

TEST(ActorUpdate, OnlyCriticOneDrivesThePolicy) {
  const GoalEnvSpec spec = make_env_spec(Dynamics::point_reach);
  Td3Agent a(spec, small_params(), 9), b(spec, small_params(), 9);
  std::mt19937_64 rng(5);
  const Batch batch = random_batch(spec, 10, rng);
  b.load_critics(b.critic1());  // critic 2 now differs from a's
  ASSERT_NE(a.critic2().parameters(), b.critic2().parameters());
  ASSERT_EQ(a.critic1().parameters(), b.critic1().parameters());
  EXPECT_EQ(flatten(a.actor_gradient(batch).second), flatten(b.actor_gradient(batch).second));
  const Vector c1 = a.critic1().parameters(), c2 = a.critic2().parameters();
  const auto r = a.actor_update(batch);
  EXPECT_EQ(r.guidance, 0.0);
  EXPECT_EQ(a.critic1().parameters(), c1);
  EXPECT_EQ(a.critic2().parameters(), c2);
}

TEST(ActorUpdate, DelayedUpdatesOnly) {
  const GoalEnvSpec spec = make_env_spec(Dynamics::point_reach);
  Td3Params p = small_params();
  p.policy_delay = 3;
  Td3Agent agent(spec, p, 10);
  std::mt19937_64 rng(6);
  for (int step = 1; step <= 9; ++step) {
    const Vector before = agent.actor().parameters();
    const Vector target_before = agent.target_critic1().parameters();
    const TrainStepResult r = agent.train_step(random_batch(spec, 8, rng), rng);
    const bool due = step % 3 == 0;
    EXPECT_EQ(r.actor_updated, due);
    EXPECT_EQ(agent.actor().parameters() != before, due) << "step " << step;
    EXPECT_EQ(agent.target_critic1().parameters() != target_before, due) << "step " << step;
  }
  EXPECT_EQ(agent.update_counter(), 9);
}

TEST(Td3Step, MatchesReferenceStep) {
  const GoalEnvSpec spec = make_env_spec(Dynamics::planar_push);
  Td3Params p = small_params();
  p.policy_delay = 1;
  Td3Agent agent(spec, p, 11);
  std::mt19937_64 rng(7);
  const Batch b = random_batch(spec, 32, rng);

  // Reference computed from copies of the starting networks.
  std::mt19937_64 ref_rng = rng;
  const Matrix noise = agent.smoothing_noise(b.size(), ref_rng);
  const Vector y = reference_targets(agent, b, noise);
  const Matrix f = make_features(b.state, b.goal, b.achieved);
  const Matrix x = agent.critic_input(f, b.action);
  Mlp c1 = agent.critic1(), c2 = agent.critic2(), actor = agent.actor();
  Vector p1 = c1.parameters(), p2 = c2.parameters(), pa = actor.parameters();
  FlatAdam o1, o2, oa;
  o1.step(p1, mse_grad(c1, x, y));
  o2.step(p2, mse_grad(c2, x, y));
  c1.set_parameters(p1);
  c2.set_parameters(p2);
  {
    ForwardCache ac, cc;
    const Matrix a = actor.forward(f, &ac);
    c1.forward(agent.critic_input(f, a), &cc);
    const GradBundle cg = c1.backward(cc, Matrix::Ones(1, b.size()));
    const Matrix da = -(1.0 / b.size()) * cg.input_grad.bottomRows(2) / spec.action_bound;
    const Matrix dz = (2.0 * 0.01 / b.size()) * ac.pre.back();
    oa.step(pa, flatten(actor.backward(ac, da, &dz)));
  }
  auto blend = [](const Vector& target, const Vector& online) { return Vector(0.005 * online + 0.995 * target); };
  const Vector t1 = blend(agent.target_critic1().parameters(), p1);
  const Vector t2 = blend(agent.target_critic2().parameters(), p2);
  const Vector ta = blend(agent.target_actor().parameters(), pa);

  agent.train_step(b, rng);
  EXPECT_LT((agent.critic1().parameters() - p1).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((agent.critic2().parameters() - p2).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((agent.actor().parameters() - pa).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((agent.target_critic1().parameters() - t1).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((agent.target_critic2().parameters() - t2).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((agent.target_actor().parameters() - ta).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(SoftUpdate, PolyakOneCopiesOnline) {
  const GoalEnvSpec spec = make_env_spec(Dynamics::point_reach);
  Td3Params p = small_params();
  p.polyak = 1.0;
  Td3Agent agent(spec, p, 12);
  std::mt19937_64 rng(8);
  agent.critic_update(random_batch(spec, 8, rng), Vector::Constant(8, -2.0));
  agent.actor_update(random_batch(spec, 8, rng));
  agent.soft_update();
  EXPECT_EQ(agent.target_actor().parameters(), agent.actor().parameters());
  EXPECT_EQ(agent.target_critic1().parameters(), agent.critic1().parameters());
  EXPECT_EQ(agent.target_critic2().parameters(), agent.critic2().parameters());
  p.polyak = 0.0;
  EXPECT_THROW(Td3Agent(spec, p, 1), ConfigError);
}

TEST(Behaviour, ZeroSigmaIsDeterministicPolicy) {
  const GoalEnvSpec spec = make_env_spec(Dynamics::point_reach);
  Td3Agent agent(spec, small_params(), 13);
  GoalEnv env(spec);
  const Observation o = env.reset(1);
  std::mt19937_64 rng(1);
  EXPECT_EQ(agent.behaviour_action(o, ExplorationNoise{0.0, 0.0}, rng), agent.act(o));
}

TEST(Behaviour, BoundedAndCentred) {
  GoalEnvSpec spec = make_env_spec(Dynamics::point_reach);
  spec.action_bound = 0.5;
  Td3Agent agent(spec, small_params(), 14);
  GoalEnv env(spec);
  const Observation o = env.reset(2);
  const Vector pi = agent.act(o);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 10000; ++i)
    ASSERT_LE(agent.behaviour_action(o, ExplorationNoise{0.0, 2.0}, rng).cwiseAbs().maxCoeff(), 0.5);
  ASSERT_LT(pi.cwiseAbs().maxCoeff(), 0.2);  // keeps clipping negligible below
  const double mu = 0.01, sigma = 0.05;
  const int n = 100000;
  Vector sum = Vector::Zero(2);
  for (int i = 0; i < n; ++i) sum += agent.behaviour_action(o, ExplorationNoise{mu, sigma}, rng) - pi;
  const Vector mean = sum / n;
  const double se = sigma / std::sqrt(static_cast<double>(n));
  EXPECT_LT(std::abs(mean(0) - mu), 3 * se);
  EXPECT_LT(std::abs(mean(1) - mu), 3 * se);
}

TEST(Agent, SaveLoadRoundTrip) {
  const GoalEnvSpec spec = make_env_spec(Dynamics::planar_slide);
  Td3Agent agent(spec, small_params(), 15);
  std::mt19937_64 rng(9);
  for (int i = 0; i < 4; ++i) agent.train_step(random_batch(spec, 8, rng), rng);
  const auto dir = std::filesystem::temp_directory_path() / "qguide_agent_roundtrip";
  std::filesystem::remove_all(dir);
  agent.save(dir);
  Td3Agent loaded(spec, small_params(), 99);
  loaded.load(dir);
  EXPECT_EQ(loaded.actor().parameters(), agent.actor().parameters());
  EXPECT_EQ(loaded.target_critic2().parameters(), agent.target_critic2().parameters());
  std::filesystem::copy_file(dir / "critic1.qgnn", dir / "actor.qgnn", std::filesystem::copy_options::overwrite_existing);
  EXPECT_THROW(loaded.load(dir), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST(Agent, ArchitectureMatchesParams) {
  const GoalEnvSpec spec = make_env_spec(Dynamics::planar_slide);
  Td3Agent agent(spec, Td3Params{}, 0);
  EXPECT_EQ(agent.actor().layer_sizes(), (std::vector<int>{12, 64, 64, 2}));
  EXPECT_EQ(agent.critic1().layer_sizes(), (std::vector<int>{14, 64, 64, 1}));
  EXPECT_TRUE(agent.target_critic2().same_architecture(agent.critic2()));
  EXPECT_EQ(agent.actor().output_activation(), OutputActivation::scaled_tanh);
  EXPECT_EQ(agent.critic1().output_activation(), OutputActivation::identity);
}
