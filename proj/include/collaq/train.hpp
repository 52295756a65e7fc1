#pragma once

// The episodic training loop: reset with a freshly sampled reward table,
// epsilon-greedy rollouts, replay, one learner step per environment step and
// metrics rows at a fixed cadence. Fully deterministic per (config, seed).

#include <deque>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "collaq/adhoc.hpp"
#include "collaq/collaq.hpp"
#include "collaq/gridworld.hpp"
#include "collaq/metrics.hpp"

namespace collaq {

template <typename S>
struct RunResult {
  std::unique_ptr<Learner<S>> learner;
  std::vector<RunMetricsRow> metrics;
  std::vector<RewardTable> episode_reward_tables;  // one per started episode
  long long episodes_completed = 0;
  bool aborted = false;           // non-finite loss hit; learner holds the last-good params
  long long abort_step = -1;
};

template <typename S = float>
inline RunResult<S> run_training(const EnvConfig& env, const TrainConfig& cfg,
                                 const NetworkSpec& spec, std::uint64_t seed,
                                 const std::function<void(const RunMetricsRow&)>& on_row = {}) {
  env.validate();
  cfg.validate();
  if (env.num_sites < 1)
    throw std::invalid_argument("run_training: training needs at least one resource site");

  RunResult<S> result;
  result.learner = std::make_unique<Learner<S>>(env, cfg, spec, seed);
  Learner<S>& learner = *result.learner;

  Rng env_rng(derive_stream(seed, "env"));
  Rng explore_rng(derive_stream(seed, "explore"));
  Rng replay_rng(derive_stream(seed, "replay"));
  ReplayBuffer<S> buffer(cfg.buffer_capacity);

  EnvState state = reset(env, env_rng);
  result.episode_reward_tables.push_back(state.rho);
  std::vector<ObservationPair> obs(env.num_agents);
  auto observe_all = [&](const EnvState& s) {
    for (int i = 0; i < env.num_agents; ++i) obs[i] = observe(env, s, i);
  };
  observe_all(state);

  double episode_return = 0.0;
  std::deque<double> return_window;  // trailing completed-episode returns
  constexpr std::size_t kReturnWindow = 20;
  long long row_index = 0;

  // Keeps the last checkpoint-worthy parameter set in case of an abort.
  std::vector<ParamStore<S>> last_good;
  auto snapshot = [&]() {
    last_good.clear();
    for (int i = 0; i < env.num_agents; ++i) last_good.push_back(learner.params(i));
  };
  snapshot();

  auto emit_row = [&](long long step) {
    RunMetricsRow row;
    row.step = step;
    row.episode = result.episodes_completed;
    row.epsilon = epsilon_at(step, cfg.epsilon);
    const BatchStats& stats = learner.last_stats();
    row.loss_dqn = stats.loss_dqn;
    row.loss_mara = stats.loss_mara;
    row.mean_abs_q_alone = stats.mean_abs_q_alone;
    row.mean_abs_q_collab_at_alone = stats.mean_abs_q_collab_at_alone;
    double window_sum = 0.0;
    for (double r : return_window) window_sum += r;
    row.train_return_window =
        return_window.empty() ? 0.0 : window_sum / static_cast<double>(return_window.size());
    if (cfg.eval_episodes_per_row > 0) {
      const EvalReport report =
          evaluate(learner, env, cfg.eval_episodes_per_row,
                   derive_stream(seed, "eval", static_cast<std::uint64_t>(row_index)),
                   "train-eval");
      row.eval_return = report.mean_return;
    }
    ++row_index;
    result.metrics.push_back(row);
    if (on_row) on_row(row);
    snapshot();
  };

  for (long long step_idx = 0; step_idx < cfg.total_steps; ++step_idx) {
    if (step_idx % cfg.metrics_cadence == 0) emit_row(step_idx);

    const double eps = epsilon_at(step_idx, cfg.epsilon);
    std::vector<int> joint(env.num_agents);
    for (int i = 0; i < env.num_agents; ++i) {
      joint[i] = learner.act(i, obs[i], eps, explore_rng);
    }
    StepResult sres = step(env, state, joint);
    episode_return += sres.team_reward;
    std::vector<ObservationPair> obs_after(env.num_agents);
    for (int i = 0; i < env.num_agents; ++i) obs_after[i] = observe(env, sres.state, i);
    buffer.push(make_transition<S>(env, obs, joint, sres.team_reward, obs_after, sres.done));

    if (sres.done) {
      ++result.episodes_completed;
      return_window.push_back(episode_return);
      if (return_window.size() > kReturnWindow) return_window.pop_front();
      episode_return = 0.0;
      state = reset(env, env_rng);
      result.episode_reward_tables.push_back(state.rho);
      observe_all(state);
    } else {
      state = std::move(sres.state);
      obs = std::move(obs_after);
    }

    if (buffer.size() >= cfg.learn_start) {
      const auto batch = buffer.sample(replay_rng, cfg.batch_size);
      try {
        learner.train_step(batch);
      } catch (const std::runtime_error&) {
        result.aborted = true;
        result.abort_step = step_idx;
        learner.load_params(std::move(last_good));
        return result;
      }
    }
  }
  emit_row(cfg.total_steps);  // final row
  return result;
}

}  // namespace collaq
