#include <gtest/gtest.h>

#include <cmath>

#include "collaq/collaq.hpp"
#include "collaq/config.hpp"
#include "collaq/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace collaq;

namespace {

EnvConfig small_env(int agents = 2) {
  EnvConfig env;
  env.width = 4;
  env.height = 4;
  env.num_agents = agents;
  env.num_sites = 2;
  env.step_cap = 12;
  return env;
}

TrainConfig small_cfg(Algo algo = Algo::kCollaQ, Variant variant = Variant::kSoftTarget) {
  TrainConfig cfg;
  cfg.algo = algo;
  cfg.variant = variant;
  cfg.batch_size = 8;
  cfg.learn_start = 1;
  cfg.buffer_capacity = 256;
  return cfg;
}

NetworkSpec small_net(const EnvConfig& env) {
  NetConfig net;
  net.alone_hidden = {16};
  net.head_hidden = {12};
  net.embed_dim = 8;
  net.attn_layers = 2;
  net.attn_heads = 2;
  return make_network_spec(env, net);
}

template <typename S>
std::vector<Transition<S>> collect(const EnvConfig& env, int count, std::uint64_t seed) {
  Rng rng(seed);
  return rollout_transitions<S>(env, count, rng);
}

template <typename S>
std::vector<const Transition<S>*> as_batch(const std::vector<Transition<S>>& v) {
  std::vector<const Transition<S>*> out;
  for (const auto& t : v) out.push_back(&t);
  return out;
}

/// Sets every tensor of an MLP tower to zero except the final bias.
template <typename S>
void stipulate_tower_output(ParamStore<S>& params, const std::string& prefix,
                            const std::vector<double>& output) {
  int last = 0;
  while (params.contains(prefix + "." + std::to_string(last + 1) + ".W")) ++last;
  for (int l = 0; l <= last; ++l) {
    params.at(prefix + "." + std::to_string(l) + ".W").setZero();
    params.at(prefix + "." + std::to_string(l) + ".b").setZero();
  }
  auto& bias = params.at(prefix + "." + std::to_string(last) + ".b");
  for (std::size_t i = 0; i < output.size(); ++i) bias(static_cast<int>(i), 0) = static_cast<S>(output[i]);
}

}  // namespace

TEST(Epsilon, LinearScheduleEndpoints) {
  const EpsSchedule s;  // 1.0 -> 0.01 over 100k
  EXPECT_DOUBLE_EQ(epsilon_at(0, s), 1.0);
  EXPECT_DOUBLE_EQ(epsilon_at(100000, s), 0.01);
  EXPECT_DOUBLE_EQ(epsilon_at(50000, s), 0.505);
  EXPECT_DOUBLE_EQ(epsilon_at(200000, s), 0.01);
  EXPECT_THROW(epsilon_at(-1, s), std::invalid_argument);
}

TEST(Act, FullExplorationIsUniform) {
  const EnvConfig env = small_env();
  Learner<float> learner(env, small_cfg(), small_net(env), 1);
  Rng env_rng(2);
  const EnvState state = reset(env, env_rng);
  const ObservationPair obs = observe(env, state, 0);
  Rng rng(3);
  const int draws = 100000;
  std::vector<int> counts(kGridActionCount, 0);
  for (int t = 0; t < draws; ++t) ++counts[learner.act(0, obs, 1.0, rng)];
  double chi2 = 0.0;
  const double expected = draws / 5.0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  EXPECT_LT(chi2, 20.0);  // 4 dof; 20 is far out in the tail
}

TEST(Act, GreedyWithTieBreak) {
  EXPECT_EQ(Learner<float>::argmax_lowest({0.f, 3.f, 3.f, 0.f, 0.f}), 1);
  const EnvConfig env = small_env();
  Learner<float> learner(env, small_cfg(), small_net(env), 4);
  Rng env_rng(5);
  const EnvState state = reset(env, env_rng);
  const ObservationPair obs = observe(env, state, 1);
  Rng rng(6);
  const int greedy = learner.act(1, obs, 0.0, rng);
  EXPECT_EQ(greedy, Learner<float>::argmax_lowest(learner.q_values(1, obs)));
}

TEST(QValues, HardVariantAddsStipulatedTowers) {
  const EnvConfig env = small_env();
  Learner<float> learner(env, small_cfg(Algo::kCollaQ, Variant::kHard), small_net(env), 7);
  ParamStore<float> p = learner.params(0);
  stipulate_tower_output(p, "alone", {1.0, 2.0, 0.0, 0.0, 3.0});
  // Zero the collab stack, then pin its head bias: Q_collab == (0.5,-1,0,0,0).
  for (const char* prefix : {"cenc", "tenc", "head"}) {
    int l = 0;
    while (p.contains(std::string(prefix) + "." + std::to_string(l) + ".W")) {
      p.at(std::string(prefix) + "." + std::to_string(l) + ".W").setZero();
      p.at(std::string(prefix) + "." + std::to_string(l) + ".b").setZero();
      ++l;
    }
  }
  stipulate_tower_output(p, "head", {0.5, -1.0, 0.0, 0.0, 0.0});
  learner.set_online_params(0, p);
  Rng env_rng(8);
  const EnvState state = reset(env, env_rng);
  const std::vector<float> q = learner.q_values(0, observe(env, state, 0));
  const std::vector<float> expected{1.5f, 1.0f, 0.0f, 0.0f, 3.0f};
  for (int a = 0; a < 5; ++a) EXPECT_FLOAT_EQ(q[a], expected[a]);
}

TEST(QValues, SoftVariantCancelsExactlyWithoutTokens) {
  EnvConfig env = small_env(1);
  Learner<float> learner(env, small_cfg(Algo::kCollaQ, Variant::kSoft), small_net(env), 9);
  Rng env_rng(10);
  for (int t = 0; t < 100; ++t) {
    const EnvState state = reset(env, env_rng);
    const ObservationPair obs = observe(env, state, 0);
    const std::vector<float> q = learner.q_values(0, obs);
    const std::vector<float> alone = learner.q_alone_values(0, obs);
    for (int a = 0; a < 5; ++a) EXPECT_EQ(q[a], alone[a]);
  }
}

TEST(QValues, MatchesManualRecomposition) {
  const EnvConfig env = small_env(3);
  const NetworkSpec spec = small_net(env);
  Learner<double> learner(env, small_cfg(Algo::kCollaQ, Variant::kHard), spec, 11);
  Rng env_rng(12);
  const EnvState state = reset(env, env_rng);
  const ObservationPair obs = observe(env, state, 2);
  const std::vector<double> q = learner.q_values(2, obs);
  const std::vector<double> expected_alone =
      oracles::naive_mlp(learner.params(2), "alone", obs.o_alone);
  const std::vector<double> expected_collab =
      oracles::naive_collab(learner.params(2), spec, obs.o_alone, obs.tokens);
  for (int a = 0; a < 5; ++a) {
    EXPECT_NEAR(q[a], expected_alone[a] + expected_collab[a], 1e-9);
  }
}

TEST(QValues, IqlUsesMeanPooledTokens) {
  const EnvConfig env = small_env(3);
  const NetworkSpec spec = small_net(env);
  Learner<double> learner(env, small_cfg(Algo::kIql), spec, 13);
  Rng env_rng(14);
  const EnvState state = reset(env, env_rng);
  const ObservationPair obs = observe(env, state, 0);
  std::vector<double> full = obs.o_alone;
  for (int r = 0; r < token_dim(env); ++r) {
    double mean = 0.0;
    for (const auto& tok : obs.tokens) mean += tok[r];
    full.push_back(mean / static_cast<double>(obs.tokens.size()));
  }
  const std::vector<double> expected = oracles::naive_mlp(learner.params(0), "tower", full);
  const std::vector<double> q = learner.q_values(0, obs);
  for (int a = 0; a < 5; ++a) EXPECT_NEAR(q[a], expected[a], 1e-12);
}

TEST(QValues, SumTwoNetsAddsBothTowers) {
  const EnvConfig env = small_env(2);
  const NetworkSpec spec = small_net(env);
  Learner<double> learner(env, small_cfg(Algo::kSumTwoNets), spec, 15);
  Rng env_rng(16);
  const EnvState state = reset(env, env_rng);
  const ObservationPair obs = observe(env, state, 1);
  std::vector<double> full = obs.o_alone;
  for (int r = 0; r < token_dim(env); ++r) full.push_back(obs.tokens[0][r]);
  const std::vector<double> a = oracles::naive_mlp(learner.params(1), "tower_a", full);
  const std::vector<double> b = oracles::naive_mlp(learner.params(1), "tower_b", full);
  const std::vector<double> q = learner.q_values(1, obs);
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(q[i], a[i] + b[i], 1e-12);
}

TEST(TdTarget, TerminalTransitionPaysRewardOnly) {
  const EnvConfig env = small_env();
  Learner<float> learner(env, small_cfg(), small_net(env), 17);
  auto transitions = collect<float>(env, 6, 18);
  for (auto& t : transitions) {
    t.done = true;
    t.reward = 10.0;
  }
  const auto targets = learner.td_target(as_batch(transitions));
  for (const auto& per_agent : targets) {
    for (double y : per_agent) EXPECT_DOUBLE_EQ(y, 10.0);
  }
}

TEST(TdTarget, ZeroGammaIsMyopic) {
  const EnvConfig env = small_env();
  TrainConfig cfg = small_cfg();
  cfg.gamma = 0.0;  // outside the validated range, exercised directly
  Learner<float> learner(env, cfg, small_net(env), 19);
  auto transitions = collect<float>(env, 6, 20);
  const auto targets = learner.td_target(as_batch(transitions));
  for (std::size_t b = 0; b < transitions.size(); ++b) {
    for (const auto& per_agent : targets) {
      EXPECT_DOUBLE_EQ(per_agent[b], transitions[b].reward);
    }
  }
}

TEST(TdTarget, MatchesScalarRecomputation) {
  const EnvConfig env = small_env();
  Learner<double> learner(env, small_cfg(), small_net(env), 21);
  auto transitions = collect<double>(env, 5, 22);
  const auto batch = as_batch(transitions);
  const auto targets = learner.td_target(batch);
  for (std::size_t b = 0; b < transitions.size(); ++b) {
    for (int i = 0; i < env.num_agents; ++i) {
      // Rebuild the next observation and evaluate the target-parameter Q.
      ObservationPair next;
      const int ad = obs_alone_dim(env);
      const int td = token_dim(env);
      next.o_alone.assign(transitions[b].alone_after.begin() + i * ad,
                          transitions[b].alone_after.begin() + (i + 1) * ad);
      for (int j = 0; j < env.num_agents - 1; ++j) {
        const auto start = transitions[b].tokens_after.begin() +
                           (static_cast<std::size_t>(i) * (env.num_agents - 1) + j) * td;
        next.tokens.emplace_back(start, start + td);
      }
      // Target nets equal online nets before any update.
      const std::vector<double> q = learner.q_values(i, next);
      const double max_q = *std::max_element(q.begin(), q.end());
      const double expected =
          transitions[b].reward +
          (transitions[b].done ? 0.0 : learner.config().gamma * max_q);
      EXPECT_NEAR(targets[i][b], expected, 1e-9);
    }
  }
}

TEST(Loss, AlphaZeroReducesToDqn) {
  const EnvConfig env = small_env();
  TrainConfig cfg = small_cfg();
  cfg.alpha = 0.0;
  Learner<float> learner(env, cfg, small_net(env), 23);
  auto transitions = collect<float>(env, 8, 24);
  const LossParts parts = learner.compute_loss(as_batch(transitions));
  EXPECT_EQ(parts.total, parts.dqn);
}

TEST(Loss, ZeroCollabHeadZeroesMara) {
  const EnvConfig env = small_env();
  Learner<float> learner(env, small_cfg(), small_net(env), 25);
  for (int i = 0; i < env.num_agents; ++i) {
    ParamStore<float> p = learner.params(i);
    stipulate_tower_output(p, "head", {0.0, 0.0, 0.0, 0.0, 0.0});
    learner.set_online_params(i, p);
  }
  auto transitions = collect<float>(env, 8, 26);
  const LossParts parts = learner.compute_loss(as_batch(transitions));
  EXPECT_EQ(parts.mara, 0.0);
}

TEST(Loss, TotalIsDqnPlusAlphaMara) {
  const EnvConfig env = small_env();
  TrainConfig cfg = small_cfg();
  cfg.alpha = 0.37;
  Learner<float> learner(env, cfg, small_net(env), 27);
  auto transitions = collect<float>(env, 8, 28);
  const LossParts parts = learner.compute_loss(as_batch(transitions));
  EXPECT_DOUBLE_EQ(parts.total, parts.dqn + cfg.alpha * parts.mara);
  EXPECT_GT(parts.mara, 0.0);
}

TEST(Loss, BaselinesHaveNoMaraTerm) {
  const EnvConfig env = small_env();
  for (Algo algo : {Algo::kIql, Algo::kSumTwoNets}) {
    Learner<float> learner(env, small_cfg(algo), small_net(env), 29);
    auto transitions = collect<float>(env, 6, 30);
    const LossParts parts = learner.compute_loss(as_batch(transitions));
    EXPECT_EQ(parts.mara, 0.0);
    EXPECT_EQ(parts.total, parts.dqn);
  }
}

TEST(TrainStep, StationaryPointLeavesParamsUnchanged) {
  // All-zero networks on zero-reward transitions: y = Q = 0 and the MARA term
  // is already satisfied, so every gradient vanishes.
  const EnvConfig env = small_env();
  Learner<float> learner(env, small_cfg(), small_net(env), 31);
  for (int i = 0; i < env.num_agents; ++i) {
    ParamStore<float> p = learner.params(i);
    for (auto& t : p.tensors()) t.value.setZero();
    learner.set_online_params(i, p);
  }
  learner.copy_targets();
  auto transitions = collect<float>(env, 8, 32);
  for (auto& t : transitions) {
    t.reward = 0.0;
    t.done = false;
  }
  learner.train_step(as_batch(transitions));
  for (int i = 0; i < env.num_agents; ++i) {
    for (const auto& t : learner.params(i).tensors()) {
      EXPECT_EQ(t.value.cwiseAbs().maxCoeff(), 0.0f) << t.name;
    }
  }
}

TEST(TrainStep, OverfitsASingleTransition) {
  const EnvConfig env = small_env();
  TrainConfig cfg = small_cfg();
  cfg.lr = 0.01;
  cfg.batch_size = 1;
  cfg.target_update_period = 1000000;  // frozen targets while overfitting
  Learner<float> learner(env, cfg, small_net(env), 33);
  auto transitions = collect<float>(env, 1, 34);
  transitions[0].done = true;
  transitions[0].reward = 1.0;
  const auto batch = as_batch(transitions);
  for (int step = 0; step < 500; ++step) learner.train_step(batch);
  EXPECT_LT(learner.compute_loss(batch).dqn, 1e-3);
}

TEST(TrainStep, TargetCopyAtThePeriodBoundary) {
  const EnvConfig env = small_env();
  TrainConfig cfg = small_cfg();
  cfg.target_update_period = 3;
  cfg.lr = 0.01;
  Learner<float> learner(env, cfg, small_net(env), 35);
  auto transitions = collect<float>(env, 8, 36);
  const auto batch = as_batch(transitions);

  auto stores_equal = [](const ParamStore<float>& a, const ParamStore<float>& b) {
    for (std::size_t t = 0; t < a.tensors().size(); ++t) {
      if (a.tensors()[t].value != b.tensors()[t].value) return false;
    }
    return true;
  };

  const ParamStore<float> target_before = learner.target_params(0);
  learner.train_step(batch);
  learner.train_step(batch);
  // Two steps in: targets still the initial snapshot, online has moved.
  EXPECT_TRUE(stores_equal(learner.target_params(0), target_before));
  EXPECT_FALSE(stores_equal(learner.params(0), target_before));
  learner.train_step(batch);  // step counter hits the period
  EXPECT_TRUE(stores_equal(learner.target_params(0), learner.params(0)));
}

TEST(TrainStep, TdTargetInvariantWithinAPeriod) {
  const EnvConfig env = small_env();
  TrainConfig cfg = small_cfg();
  cfg.target_update_period = 1000;
  cfg.lr = 0.01;
  Learner<float> learner(env, cfg, small_net(env), 37);
  auto transitions = collect<float>(env, 8, 38);
  const auto batch = as_batch(transitions);
  const auto targets_before = learner.td_target(batch);
  for (int s = 0; s < 5; ++s) learner.train_step(batch);
  EXPECT_EQ(learner.td_target(batch), targets_before);
}

TEST(TrainStep, NonFiniteLossAborts) {
  const EnvConfig env = small_env();
  Learner<float> learner(env, small_cfg(), small_net(env), 39);
  ParamStore<float> p = learner.params(0);
  p.at("alone.0.W")(0, 0) = std::numeric_limits<float>::quiet_NaN();
  learner.set_online_params(0, p);
  auto transitions = collect<float>(env, 4, 40);
  EXPECT_THROW(learner.train_step(as_batch(transitions)), std::runtime_error);
}

TEST(Mara, SingleStepNeverIncreasesThePenaltyOnTheSample) {
  // Direct form of the monotone-pressure property: a tiny plain-gradient step
  // on the isolated MARA term cannot increase (Q_collab(o_alone, a))^2.
  const EnvConfig env = small_env(3);
  const NetworkSpec spec = small_net(env);
  Rng rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    ParamStore<double> p = init_params<double>(spec, rng);
    Rng env_rng(100 + trial);
    const EnvState state = reset(env, env_rng);
    const ObservationPair obs = observe(env, state, 0);
    Mat<double> xa(static_cast<int>(obs.o_alone.size()), 1);
    for (std::size_t i = 0; i < obs.o_alone.size(); ++i) xa(static_cast<int>(i), 0) = obs.o_alone[i];
    const int action = rng.uniform_int(kGridActionCount);

    CollabTrace<double> trace;
    const Mat<double> qca = collab_forward(p, spec, xa, {}, &trace);
    const double before = qca(action, 0) * qca(action, 0);

    ParamStore<double> grads = p.zeros_like();
    Mat<double> upstream = Mat<double>::Zero(kGridActionCount, 1);
    upstream(action, 0) = 2.0 * qca(action, 0);
    collab_backward(p, spec, trace, upstream, grads);
    for (std::size_t t = 0; t < p.tensors().size(); ++t) {
      p.tensors()[t].value -= 1e-6 * grads.tensors()[t].value;
    }
    const Mat<double> after_q = collab_forward(p, spec, xa, {});
    const double after = after_q(action, 0) * after_q(action, 0);
    EXPECT_LE(after, before + 1e-12);
  }
}

TEST(ReplayBuffer, RingWrapAndSampling) {
  ReplayBuffer<float> buffer(4);
  for (int i = 0; i < 6; ++i) {
    Transition<float> t;
    t.reward = i;
    t.actions = {0};
    buffer.push(std::move(t));
  }
  EXPECT_EQ(buffer.size(), 4);
  // Oldest two entries were overwritten.
  std::set<double> rewards;
  for (int i = 0; i < 4; ++i) rewards.insert(buffer[i].reward);
  EXPECT_EQ(rewards, (std::set<double>{2.0, 3.0, 4.0, 5.0}));
  Rng rng(42);
  const auto batch = buffer.sample(rng, 10);
  EXPECT_EQ(batch.size(), 10u);
}

TEST(GradientFidelity, FullLossMatchesFiniteDifferences) {
  // A trimmed version of the acceptance sweep so gradient regressions fail
  // fast in the unit suite.
  double worst = 0.0;
  for (int s = 0; s < 6; ++s) {
    worst = std::max(worst, gradcheck_random_spec(derive_stream(7, "unit-gradcheck", s)));
  }
  EXPECT_LE(worst, 1e-6);
}
