#pragma once

// Randomized gradient verification of the full training loss: random
// architectures (with attention), random environments and rollouts, analytic
// gradients against central finite differences in 64-bit.

#include <algorithm>
#include <vector>

#include "collaq/collaq.hpp"
#include "collaq/gridworld.hpp"
#include "collaq/nnet.hpp"
#include "collaq/rng.hpp"

namespace collaq {

/// Collects a handful of random-action transitions for loss evaluation.
template <typename S>
inline std::vector<Transition<S>> rollout_transitions(const EnvConfig& env, int count, Rng& rng) {
  std::vector<Transition<S>> out;
  EnvState state = reset(env, rng);
  while (static_cast<int>(out.size()) < count) {
    if (state.done) state = reset(env, rng);
    std::vector<ObservationPair> before(env.num_agents);
    for (int i = 0; i < env.num_agents; ++i) before[i] = observe(env, state, i);
    std::vector<int> joint(env.num_agents);
    for (int i = 0; i < env.num_agents; ++i) joint[i] = rng.uniform_int(kGridActionCount);
    StepResult sres = step(env, state, joint);
    std::vector<ObservationPair> after(env.num_agents);
    for (int i = 0; i < env.num_agents; ++i) after[i] = observe(env, sres.state, i);
    out.push_back(make_transition<S>(env, before, joint, sres.team_reward, after, sres.done));
    state = std::move(sres.state);
  }
  return out;
}

/// One random spec/loss gradcheck; returns the max relative error over a
/// coordinate subsample of agent 0's parameters.
inline double gradcheck_random_spec(std::uint64_t seed, int min_coords = 220,
                                    double eps = 1e-5) {
  Rng rng(seed);

  EnvConfig env;
  env.width = 3 + rng.uniform_int(3);
  env.height = 3 + rng.uniform_int(3);
  env.num_agents = 1 + rng.uniform_int(3);
  env.num_sites = 1 + rng.uniform_int(3);
  env.resource_types = 2;
  env.step_cap = 10;
  env.sampler = RewardSampler::kRankedRandom;

  TrainConfig cfg;
  cfg.gamma = 0.9;
  cfg.batch_size = 6;
  cfg.alpha = rng.uniform_int(3) == 0 ? 0.0 : rng.uniform(0.2, 1.5);
  static const Variant variants[] = {Variant::kHard, Variant::kSoft, Variant::kSoftTarget};
  cfg.variant = variants[rng.uniform_int(3)];
  static const Algo algos[] = {Algo::kCollaQ, Algo::kCollaQ, Algo::kCollaQ, Algo::kIql,
                               Algo::kSumTwoNets};
  cfg.algo = algos[rng.uniform_int(5)];
  cfg.mixer = rng.uniform_int(4) == 0 ? Mixer::kAdditive : Mixer::kNone;
  cfg.mara_actions = rng.uniform_int(2) == 0 ? MaraActions::kSampled : MaraActions::kAll;

  NetworkSpec spec;
  const int embed = 4 * (1 + rng.uniform_int(3));  // 4, 8 or 12
  spec.alone_tower = {obs_alone_dim(env), 8 + rng.uniform_int(12), kGridActionCount};
  spec.collab_encoder = {obs_alone_dim(env), embed};
  spec.token_encoder = {token_dim(env), embed};
  spec.attention = {1 + rng.uniform_int(2), embed, rng.uniform_int(2) == 0 ? 1 : 2};
  spec.collab_head = {2 * embed, 8 + rng.uniform_int(8), kGridActionCount};
  spec.double_precision = true;

  Learner<double> learner(env, cfg, spec, rng.next_u64());
  // Desynchronize the targets so the TD residuals are non-trivial.
  {
    Rng target_rng(rng.next_u64());
    Learner<double> other(env, cfg, spec, target_rng.next_u64());
    std::vector<ParamStore<double>> targets;
    for (int i = 0; i < env.num_agents; ++i) targets.push_back(other.params(i));
    learner.set_target_params(std::move(targets));
  }

  Rng env_rng(rng.next_u64());
  const std::vector<Transition<double>> transitions =
      rollout_transitions<double>(env, cfg.batch_size, env_rng);
  std::vector<const Transition<double>*> batch;
  for (const auto& t : transitions) batch.push_back(&t);

  const ParamStore<double> analytic = learner.loss_gradients(0, batch);
  ParamStore<double> probe = learner.params(0);
  const auto loss = [&](const ParamStore<double>& p) {
    learner.set_online_params(0, p);
    return learner.compute_loss(batch).total;
  };
  Rng coord_rng(rng.next_u64());
  const GradCheckResult result = finite_diff_gradcheck(probe, analytic, loss, eps, min_coords,
                                                       coord_rng, {1e-3, 3e-4, 1e-4, 1e-6});
  learner.set_online_params(0, probe);  // restore
  return result.max_rel_err;
}

/// Max relative error over `specs` random configurations.
inline double gradcheck_sweep(int specs, std::uint64_t seed) {
  double worst = 0.0;
  for (int s = 0; s < specs; ++s) {
    worst = std::max(worst, gradcheck_random_spec(derive_stream(seed, "gradcheck",
                                                                static_cast<std::uint64_t>(s))));
  }
  return worst;
}

}  // namespace collaq
