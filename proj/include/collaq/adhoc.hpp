#pragma once

// Zero-shot evaluation: greedy rollouts over fresh episodes, the held-out
// reversed-ranking reward setup, team resizing at test time, and the
// Q_alone-vs-Q policy-map export.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "collaq/collaq.hpp"
#include "collaq/gridworld.hpp"

namespace collaq {

struct EvalReport {
  std::string scenario;
  int episodes = 0;
  double mean_return = 0.0;
  double std_err = 0.0;
  std::vector<double> per_episode;
  std::uint64_t seed = 0;
};

inline void finalize_report(EvalReport& report) {
  const int n = static_cast<int>(report.per_episode.size());
  report.episodes = n;
  if (n == 0) return;
  double sum = 0.0;
  for (double r : report.per_episode) sum += r;
  report.mean_return = sum / n;
  if (n > 1) {
    double sq = 0.0;
    for (double r : report.per_episode) sq += (r - report.mean_return) * (r - report.mean_return);
    report.std_err = std::sqrt(sq / (n - 1)) / std::sqrt(static_cast<double>(n));
  }
}

/// Greedy (epsilon = 0) rollouts with per-episode derived seeds. `agents`
/// supplies one parameter store per seat; target stores back the soft_target
/// subtraction and default to the online parameters.
template <typename S>
inline EvalReport evaluate_policies(const EnvConfig& env, const TrainConfig& cfg,
                                    const NetworkSpec& spec,
                                    const std::vector<const ParamStore<S>*>& agents,
                                    int episodes, std::uint64_t seed,
                                    const std::string& scenario,
                                    const std::vector<const ParamStore<S>*>& targets = {}) {
  env.validate();
  if (static_cast<int>(agents.size()) != env.num_agents)
    throw std::invalid_argument("evaluate: need one parameter store per agent");
  if (!targets.empty() && targets.size() != agents.size())
    throw std::invalid_argument("evaluate: target store count mismatch");
  if (spec.alone_tower.front() != obs_alone_dim(env) ||
      spec.token_encoder.front() != token_dim(env))
    throw std::invalid_argument("evaluate: observation layout does not match the networks");

  // A scratch learner holds the evaluation parameters; evaluation never
  // touches the originals.
  Learner<S> learner(env, cfg, spec, /*master_seed=*/0);
  std::vector<ParamStore<S>> stores;
  stores.reserve(agents.size());
  for (std::size_t i = 0; i < agents.size(); ++i) stores.push_back(*agents[i]);
  learner.load_params(std::move(stores));
  if (!targets.empty()) {
    std::vector<ParamStore<S>> target_stores;
    target_stores.reserve(targets.size());
    for (std::size_t i = 0; i < targets.size(); ++i) target_stores.push_back(*targets[i]);
    learner.set_target_params(std::move(target_stores));
  }

  EvalReport report;
  report.scenario = scenario;
  report.seed = seed;
  report.per_episode.reserve(episodes);
  for (int ep = 0; ep < episodes; ++ep) {
    Rng rng(derive_stream(seed, "eval-episode", static_cast<std::uint64_t>(ep)));
    EnvState state = reset(env, rng);
    double ep_return = 0.0;
    while (!state.done) {
      std::vector<int> joint(env.num_agents);
      for (int i = 0; i < env.num_agents; ++i) {
        joint[i] = Learner<S>::argmax_lowest(learner.q_values(i, observe(env, state, i)));
      }
      StepResult result = step(env, state, joint);
      ep_return += result.team_reward;
      state = std::move(result.state);
    }
    report.per_episode.push_back(ep_return);
  }
  finalize_report(report);
  return report;
}

/// Standard evaluation with a learner's own trained parameters.
template <typename S>
inline EvalReport evaluate(const Learner<S>& learner, const EnvConfig& env, int episodes,
                           std::uint64_t seed, const std::string& scenario = "standard") {
  std::vector<const ParamStore<S>*> agents;
  std::vector<const ParamStore<S>*> targets;
  for (int i = 0; i < env.num_agents; ++i) {
    agents.push_back(&learner.params(i));
    targets.push_back(&learner.target_params(i));
  }
  return evaluate_policies(env, learner.config(), learner.spec(), agents, episodes, seed,
                           scenario, targets);
}

/// Held-out test: the reversed-ranking reward family, excluded from training.
template <typename S>
inline EvalReport adhoc_reversed_test(const Learner<S>& learner, int episodes,
                                      std::uint64_t seed) {
  EnvConfig env = learner.env_config();
  if (env.resource_types != 2)
    throw std::invalid_argument("adhoc_reversed_test: requires exactly two resource types");
  env.sampler = RewardSampler::kReversedRanking;
  EvalReport report = evaluate(learner, env, episodes, seed, "adhoc_reversed");
  return report;
}

/// Evaluates nets trained at K agents with a different team size. Extra seats
/// clone the last trained agent's parameters; smaller teams drop the tail.
template <typename S>
inline EvalReport adhoc_team_size_test(const Learner<S>& learner, int test_k, int episodes,
                                       std::uint64_t seed,
                                       RewardSampler sampler = RewardSampler::kRankedRandom) {
  const int trained_k = learner.env_config().num_agents;
  if (test_k < 1) throw std::invalid_argument("adhoc_team_size_test: test_K must be positive");
  if (std::abs(test_k - trained_k) > trained_k - 1)
    throw std::invalid_argument("adhoc_team_size_test: |test_K - K| must not exceed K - 1");
  EnvConfig env = learner.env_config();
  env.num_agents = test_k;
  env.sampler = sampler;
  env.validate();
  std::vector<const ParamStore<S>*> agents;
  std::vector<const ParamStore<S>*> targets;
  for (int i = 0; i < test_k; ++i) {
    const int source = std::min(i, trained_k - 1);
    agents.push_back(&learner.params(source));
    targets.push_back(&learner.target_params(source));
  }
  return evaluate_policies(env, learner.config(), learner.spec(), agents, episodes, seed,
                           "team_size:" + std::to_string(test_k), targets);
}

/// Greedy-action grids for one agent swept over every free cell of a frozen
/// scene, once under Q_alone and once under the full Q.
struct PolicyMap {
  int width = 0;
  int height = 0;
  int agent = 0;
  std::vector<int> q_alone_actions;  // cell -> action, -1 where the cell is not free
  std::vector<int> q_actions;
  EnvState scene;
};

template <typename S>
inline PolicyMap policy_map_export(const Learner<S>& learner, const EnvState& frozen, int agent) {
  const EnvConfig& env = learner.env_config();
  if (learner.config().algo != Algo::kCollaQ)
    throw std::invalid_argument("policy_map_export: needs the collaq decomposition");
  if (agent < 0 || agent >= env.num_agents)
    throw std::invalid_argument("policy_map_export: agent index out of range");

  PolicyMap map;
  map.width = env.width;
  map.height = env.height;
  map.agent = agent;
  map.scene = frozen;
  map.q_alone_actions.assign(env.cells(), -1);
  map.q_actions.assign(env.cells(), -1);
  for (int cell = 0; cell < env.cells(); ++cell) {
    bool free = true;
    for (int j = 0; j < env.num_agents; ++j) {
      if (j != agent && frozen.agent_positions[j] == cell) free = false;
    }
    if (!free) continue;
    EnvState state = frozen;
    state.agent_positions[agent] = cell;
    const ObservationPair obs = observe(env, state, agent);
    map.q_alone_actions[cell] = Learner<S>::argmax_lowest(learner.q_alone_values(agent, obs));
    map.q_actions[cell] = Learner<S>::argmax_lowest(learner.q_values(agent, obs));
  }
  return map;
}

}  // namespace collaq
