#pragma once

// The CollaQ learner: Q decomposed into an alone tower plus a collab stack
// that vanishes without teammates, trained with standard DQN plus the
// multi-agent reward-attribution penalty. IQL and a summed two-tower net are
// kept as baselines behind the same interface.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "collaq/gridworld.hpp"
#include "collaq/nnet.hpp"
#include "collaq/rng.hpp"

namespace collaq {

enum class Variant { kHard, kSoft, kSoftTarget };
enum class Algo { kCollaQ, kIql, kSumTwoNets };
enum class Mixer { kNone, kAdditive };
enum class MaraActions { kSampled, kAll };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::kHard: return "hard";
    case Variant::kSoft: return "soft";
    case Variant::kSoftTarget: return "soft_target";
  }
  return "?";
}
inline std::string to_string(Algo a) {
  switch (a) {
    case Algo::kCollaQ: return "collaq";
    case Algo::kIql: return "iql";
    case Algo::kSumTwoNets: return "sum_two_nets";
  }
  return "?";
}
inline std::string to_string(Mixer m) {
  return m == Mixer::kNone ? "none" : "additive";
}
inline std::string to_string(MaraActions m) {
  return m == MaraActions::kSampled ? "sampled" : "all";
}

struct EpsSchedule {
  double start = 1.0;
  double end = 0.01;
  long long anneal_steps = 100000;
};

/// Linear interpolation from start to end, clamped past the anneal window.
inline double epsilon_at(long long step, const EpsSchedule& s) {
  if (step < 0) throw std::invalid_argument("epsilon_at: step must be non-negative");
  if (s.anneal_steps <= 0) return s.end;
  const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(s.anneal_steps));
  return s.start + (s.end - s.start) * t;
}

struct TrainConfig {
  double gamma = 0.992;
  double lr = 4e-5;
  double alpha = 1.0;
  int batch_size = 128;
  long long target_update_period = 10000;
  EpsSchedule epsilon;
  long long total_steps = 150000;
  int buffer_capacity = 100000;
  int learn_start = 1000;
  Variant variant = Variant::kSoftTarget;
  Algo algo = Algo::kCollaQ;
  Mixer mixer = Mixer::kNone;
  MaraActions mara_actions = MaraActions::kSampled;
  double rmsprop_decay = 0.99;
  double rmsprop_eps = 1e-5;
  int metrics_cadence = 500;
  int eval_episodes_per_row = 8;

  void validate() const {
    if (!(gamma > 0.0 && gamma < 1.0))
      throw std::invalid_argument("TrainConfig: gamma must lie in (0, 1)");
    if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be positive");
    if (alpha < 0.0) throw std::invalid_argument("TrainConfig: alpha must be non-negative");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be positive");
    if (target_update_period < 1)
      throw std::invalid_argument("TrainConfig: target_update_period must be positive");
    if (!(epsilon.start >= epsilon.end && epsilon.end >= 0.0 && epsilon.start <= 1.0))
      throw std::invalid_argument("TrainConfig: need epsilon.start >= epsilon.end >= 0");
    if (epsilon.anneal_steps < 1)
      throw std::invalid_argument("TrainConfig: epsilon.anneal_steps must be positive");
    if (total_steps < 0) throw std::invalid_argument("TrainConfig: total_steps must be >= 0");
    if (buffer_capacity < 1)
      throw std::invalid_argument("TrainConfig: buffer_capacity must be positive");
    if (learn_start < 1) throw std::invalid_argument("TrainConfig: learn_start must be positive");
    if (!(rmsprop_decay >= 0.0 && rmsprop_decay < 1.0))
      throw std::invalid_argument("TrainConfig: rmsprop_decay must lie in [0, 1)");
    if (!(rmsprop_eps > 0.0)) throw std::invalid_argument("TrainConfig: rmsprop_eps must be > 0");
    if (metrics_cadence < 1)
      throw std::invalid_argument("TrainConfig: metrics_cadence must be positive");
    if (eval_episodes_per_row < 0)
      throw std::invalid_argument("TrainConfig: eval_episodes_per_row must be >= 0");
  }
};

/// One environment step as stored in replay: per-agent observations before
/// and after, the joint action, the shared reward and the terminal flag.
/// Token blocks are flat, (K-1) * token_dim per agent, others ascending.
template <typename S>
struct Transition {
  std::vector<S> alone_before;   // K * alone_dim
  std::vector<S> tokens_before;  // K * (K-1) * token_dim
  std::vector<S> alone_after;
  std::vector<S> tokens_after;
  std::vector<int> actions;
  double reward = 0.0;
  bool done = false;
};

template <typename S>
inline Transition<S> make_transition(const EnvConfig& env,
                                     const std::vector<ObservationPair>& before,
                                     const std::vector<int>& actions, double reward,
                                     const std::vector<ObservationPair>& after, bool done) {
  const int k = env.num_agents;
  const int ad = obs_alone_dim(env);
  const int td = token_dim(env);
  Transition<S> t;
  t.alone_before.reserve(static_cast<std::size_t>(k) * ad);
  t.tokens_before.reserve(static_cast<std::size_t>(k) * (k - 1) * td);
  t.alone_after.reserve(static_cast<std::size_t>(k) * ad);
  t.tokens_after.reserve(static_cast<std::size_t>(k) * (k - 1) * td);
  auto flatten = [&](const std::vector<ObservationPair>& obs, std::vector<S>& alone,
                     std::vector<S>& tokens) {
    for (const ObservationPair& o : obs) {
      for (double x : o.o_alone) alone.push_back(static_cast<S>(x));
      for (const std::vector<double>& tok : o.tokens) {
        for (double x : tok) tokens.push_back(static_cast<S>(x));
      }
    }
  };
  flatten(before, t.alone_before, t.tokens_before);
  flatten(after, t.alone_after, t.tokens_after);
  t.actions = actions;
  t.reward = reward;
  t.done = done;
  return t;
}

/// Fixed-capacity ring with uniform sampling with replacement.
template <typename S>
class ReplayBuffer {
 public:
  explicit ReplayBuffer(int capacity) : capacity_(capacity) {
    if (capacity < 1) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
    data_.reserve(capacity);
  }

  void push(Transition<S> t) {
    if (static_cast<int>(data_.size()) < capacity_) {
      data_.push_back(std::move(t));
    } else {
      data_[write_] = std::move(t);
    }
    write_ = (write_ + 1) % capacity_;
  }

  int size() const { return static_cast<int>(data_.size()); }
  int capacity() const { return capacity_; }
  const Transition<S>& operator[](int i) const { return data_[i]; }

  std::vector<const Transition<S>*> sample(Rng& rng, int batch) const {
    if (data_.empty()) throw std::logic_error("ReplayBuffer: cannot sample from an empty buffer");
    std::vector<const Transition<S>*> out(batch);
    for (int b = 0; b < batch; ++b) out[b] = &data_[rng.uniform_int(size())];
    return out;
  }

 private:
  int capacity_;
  int write_ = 0;
  std::vector<Transition<S>> data_;
};

struct LossParts {
  double dqn = 0.0;
  double mara = 0.0;
  double total = 0.0;
};

struct BatchStats {
  double loss_dqn = 0.0;
  double loss_mara = 0.0;
  double mean_abs_q_alone = 0.0;
  double mean_abs_q_collab_at_alone = 0.0;
};

/// Per-agent networks (online + periodic target copy), the optimizer state
/// and the batched forward/backward machinery of one training run.
template <typename S>
class Learner {
 public:
  Learner(const EnvConfig& env, const TrainConfig& cfg, const NetworkSpec& spec,
          std::uint64_t master_seed)
      : env_(env), cfg_(cfg), spec_(spec), num_agents_(env.num_agents) {
    spec_.validate();
    alone_dim_ = obs_alone_dim(env_);
    token_dim_ = token_dim(env_);
    if (spec_.alone_tower.front() != alone_dim_)
      throw std::invalid_argument("Learner: alone tower input does not match the observation");
    if (spec_.token_encoder.front() != token_dim_)
      throw std::invalid_argument("Learner: token encoder input does not match the observation");
    for (int i = 0; i < num_agents_; ++i) {
      Rng rng(derive_stream(master_seed, "init", static_cast<std::uint64_t>(i)));
      params_.push_back(build_params(rng));
      targets_.push_back(params_.back());
      rms_.push_back(params_.back().zeros_like());
    }
  }

  int num_agents() const { return num_agents_; }
  int num_actions() const { return spec_.num_actions(); }
  const NetworkSpec& spec() const { return spec_; }
  const TrainConfig& config() const { return cfg_; }
  const EnvConfig& env_config() const { return env_; }
  long long train_steps() const { return train_steps_; }
  const BatchStats& last_stats() const { return last_stats_; }

  const ParamStore<S>& params(int agent) const { return params_[agent]; }
  ParamStore<S>& mutable_params(int agent) { return params_[agent]; }
  const ParamStore<S>& target_params(int agent) const { return targets_[agent]; }

  void load_params(std::vector<ParamStore<S>> stores) {
    if (static_cast<int>(stores.size()) != num_agents_)
      throw std::invalid_argument("Learner: wrong number of agent parameter stores");
    params_ = std::move(stores);
    targets_ = params_;
  }

  void set_target_params(std::vector<ParamStore<S>> stores) {
    if (static_cast<int>(stores.size()) != num_agents_)
      throw std::invalid_argument("Learner: wrong number of target parameter stores");
    targets_ = std::move(stores);
  }

  /// Replaces one agent's online parameters; targets stay untouched.
  void set_online_params(int agent, ParamStore<S> store) { params_[agent] = std::move(store); }

  /// Analytic gradient of the total loss with respect to one agent's online
  /// parameters (targets held fixed, as in a training step).
  ParamStore<S> loss_gradients(int agent, const std::vector<const Transition<S>*>& batch) const {
    const ForwardBundle fb = forward_batch(batch);
    ParamStore<S> grads = params_[agent].zeros_like();
    accumulate_gradients(fb, agent, grads);
    return grads;
  }

  void copy_targets() { targets_ = params_; }

  /// Per-action Q values for one observation under the online parameters.
  std::vector<S> q_values(int agent, const ObservationPair& obs) const {
    Mat<S> xa = column_from(obs.o_alone);
    std::vector<Mat<S>> toks = token_columns(obs.tokens);
    const Mat<S> q = q_eval(params_[agent], targets_[agent], xa, toks);
    std::vector<S> out(q.rows());
    for (int a = 0; a < q.rows(); ++a) out[a] = q(a, 0);
    return out;
  }

  /// Alone-tower values only (the policy an agent would follow by itself).
  std::vector<S> q_alone_values(int agent, const ObservationPair& obs) const {
    if (cfg_.algo != Algo::kCollaQ)
      throw std::logic_error("q_alone_values: only defined for the collaq decomposition");
    Mat<S> xa = column_from(obs.o_alone);
    const Mat<S> q = mlp_forward(params_[agent], "alone", xa);
    std::vector<S> out(q.rows());
    for (int a = 0; a < q.rows(); ++a) out[a] = q(a, 0);
    return out;
  }

  /// Epsilon-greedy: uniform action with probability eps, else the greedy
  /// action with lowest-index tie-break.
  int act(int agent, const ObservationPair& obs, double eps, Rng& rng) const {
    if (!(eps >= 0.0 && eps <= 1.0)) throw std::invalid_argument("act: eps must lie in [0, 1]");
    if (eps > 0.0 && rng.next_double() < eps) return rng.uniform_int(num_actions());
    const std::vector<S> q = q_values(agent, obs);
    return argmax_lowest(q);
  }

  static int argmax_lowest(const std::vector<S>& q) {
    int best = 0;
    for (int a = 1; a < static_cast<int>(q.size()); ++a) {
      if (q[a] > q[best]) best = a;
    }
    return best;
  }

  /// TD targets under the current target networks. With the additive mixer a
  /// single joint target per transition is returned in row 0.
  std::vector<std::vector<double>> td_target(const std::vector<const Transition<S>*>& batch) const {
    const ForwardBundle fb = forward_batch(batch);
    return fb.targets;
  }

  LossParts compute_loss(const std::vector<const Transition<S>*>& batch) const {
    return forward_batch(batch).parts;
  }

  /// One gradient step on the total loss for every agent, then the periodic
  /// target copy. Counts its own invocations.
  void train_step(const std::vector<const Transition<S>*>& batch) {
    ForwardBundle fb = forward_batch(batch);
    if (!std::isfinite(fb.parts.total))
      throw std::runtime_error("train_step: non-finite loss at learner step " +
                               std::to_string(train_steps_ + 1));
    for (int i = 0; i < num_agents_; ++i) {
      ParamStore<S> grads = params_[i].zeros_like();
      accumulate_gradients(fb, i, grads);
      apply_rmsprop(i, grads);
    }
    last_stats_.loss_dqn = fb.parts.dqn;
    last_stats_.loss_mara = fb.parts.mara;
    last_stats_.mean_abs_q_alone = fb.mean_abs_q_alone;
    last_stats_.mean_abs_q_collab_at_alone = fb.mean_abs_q_collab_at_alone;
    ++train_steps_;
    if (train_steps_ % cfg_.target_update_period == 0) copy_targets();
  }

 private:
  struct AgentForward {
    Mat<S> xa, xa2;
    std::vector<Mat<S>> toks, toks2;
    Mat<S> full_in;  // iql / sum_two_nets input
    std::vector<int> actions;
    // online passes
    MlpTrace<S> alone_trace;
    Mat<S> q_alone;
    CollabTrace<S> collab_trace;
    Mat<S> q_collab;
    CollabTrace<S> collab_alone_trace;
    Mat<S> q_collab_alone;
    bool shared_alone_pass = false;  // tokens empty: collab(o) is collab(o_alone)
    MlpTrace<S> tower_trace, tower_b_trace;
    Mat<S> q_tower, q_tower_b;
    Mat<S> q;        // full online Q
    Vec<S> qmax_next;
  };

  struct ForwardBundle {
    std::vector<AgentForward> agents;
    std::vector<double> rewards;
    std::vector<bool> dones;
    std::vector<std::vector<double>> targets;  // [agent][b]; additive mixer: row 0 only
    std::vector<std::vector<double>> gcoef;    // same layout as targets
    LossParts parts;
    double mean_abs_q_alone = 0.0;
    double mean_abs_q_collab_at_alone = 0.0;
  };

  ParamStore<S> build_params(Rng& rng) const {
    switch (cfg_.algo) {
      case Algo::kCollaQ:
        return init_params<S>(spec_, rng);
      case Algo::kIql: {
        ParamStore<S> p;
        add_mlp_params(p, "tower", full_tower_sizes(), rng);
        return p;
      }
      case Algo::kSumTwoNets: {
        ParamStore<S> p;
        add_mlp_params(p, "tower_a", full_tower_sizes(), rng);
        add_mlp_params(p, "tower_b", full_tower_sizes(), rng);
        return p;
      }
    }
    throw std::logic_error("Learner: unknown algorithm");
  }

  /// Tower over the full observation [o_alone ++ mean-pooled tokens]; hidden
  /// widths follow the alone tower.
  std::vector<int> full_tower_sizes() const {
    std::vector<int> sizes = spec_.alone_tower;
    sizes.front() = alone_dim_ + token_dim_;
    return sizes;
  }

  static Mat<S> column_from(const std::vector<double>& v) {
    Mat<S> m(static_cast<int>(v.size()), 1);
    for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<int>(i), 0) = static_cast<S>(v[i]);
    return m;
  }

  static std::vector<Mat<S>> token_columns(const std::vector<std::vector<double>>& tokens) {
    std::vector<Mat<S>> out;
    out.reserve(tokens.size());
    for (const std::vector<double>& t : tokens) out.push_back(column_from(t));
    return out;
  }

  static Mat<S> pooled_tokens(const std::vector<Mat<S>>& toks, int dim, int batch) {
    Mat<S> pooled = Mat<S>::Zero(dim, batch);
    if (toks.empty()) return pooled;
    for (const Mat<S>& t : toks) pooled += t;
    pooled /= static_cast<S>(toks.size());
    return pooled;
  }

  Mat<S> full_input(const Mat<S>& xa, const std::vector<Mat<S>>& toks) const {
    Mat<S> full(alone_dim_ + token_dim_, xa.cols());
    full.topRows(alone_dim_) = xa;
    full.bottomRows(token_dim_) = pooled_tokens(toks, token_dim_, static_cast<int>(xa.cols()));
    return full;
  }

  /// Full Q for arbitrary parameter stores (used for both online and target
  /// evaluation; `target` supplies the subtracted term under soft_target).
  Mat<S> q_eval(const ParamStore<S>& p, const ParamStore<S>& target, const Mat<S>& xa,
                const std::vector<Mat<S>>& toks) const {
    switch (cfg_.algo) {
      case Algo::kIql:
        return mlp_forward(p, "tower", full_input(xa, toks));
      case Algo::kSumTwoNets: {
        const Mat<S> full = full_input(xa, toks);
        return mlp_forward(p, "tower_a", full) + mlp_forward(p, "tower_b", full);
      }
      case Algo::kCollaQ:
        break;
    }
    const Mat<S> q_alone = mlp_forward(p, "alone", xa);
    switch (cfg_.variant) {
      case Variant::kHard:
        return q_alone + collab_forward(p, spec_, xa, toks);
      case Variant::kSoft: {
        if (toks.empty()) return q_alone;  // exact cancellation
        const Mat<S> q_collab = collab_forward(p, spec_, xa, toks);
        const Mat<S> q_collab_alone = collab_forward(p, spec_, xa, {});
        return q_alone + (q_collab - q_collab_alone);
      }
      case Variant::kSoftTarget: {
        const Mat<S> q_collab = collab_forward(p, spec_, xa, toks);
        const Mat<S> q_collab_alone = collab_forward(target, spec_, xa, {});
        return q_alone + (q_collab - q_collab_alone);
      }
    }
    throw std::logic_error("Learner: unknown variant");
  }

  void gather_batch(const std::vector<const Transition<S>*>& batch, int agent,
                    AgentForward& fwd) const {
    const int b_count = static_cast<int>(batch.size());
    const int other = num_agents_ - 1;
    fwd.xa.resize(alone_dim_, b_count);
    fwd.xa2.resize(alone_dim_, b_count);
    fwd.toks.assign(other, Mat<S>(token_dim_, b_count));
    fwd.toks2.assign(other, Mat<S>(token_dim_, b_count));
    fwd.actions.resize(b_count);
    for (int b = 0; b < b_count; ++b) {
      const Transition<S>& t = *batch[b];
      const S* alone1 = t.alone_before.data() + static_cast<std::size_t>(agent) * alone_dim_;
      const S* alone2 = t.alone_after.data() + static_cast<std::size_t>(agent) * alone_dim_;
      for (int r = 0; r < alone_dim_; ++r) {
        fwd.xa(r, b) = alone1[r];
        fwd.xa2(r, b) = alone2[r];
      }
      const S* tok1 =
          t.tokens_before.data() + static_cast<std::size_t>(agent) * other * token_dim_;
      const S* tok2 =
          t.tokens_after.data() + static_cast<std::size_t>(agent) * other * token_dim_;
      for (int j = 0; j < other; ++j) {
        for (int r = 0; r < token_dim_; ++r) {
          fwd.toks[j](r, b) = tok1[j * token_dim_ + r];
          fwd.toks2[j](r, b) = tok2[j * token_dim_ + r];
        }
      }
      fwd.actions[b] = t.actions[agent];
    }
  }

  ForwardBundle forward_batch(const std::vector<const Transition<S>*>& batch) const {
    if (batch.empty()) throw std::invalid_argument("forward_batch: batch must be non-empty");
    const int b_count = static_cast<int>(batch.size());
    const int actions = num_actions();
    ForwardBundle fb;
    fb.agents.resize(num_agents_);
    fb.rewards.resize(b_count);
    fb.dones.resize(b_count);
    for (int b = 0; b < b_count; ++b) {
      fb.rewards[b] = batch[b]->reward;
      fb.dones[b] = batch[b]->done;
    }

    double abs_q_alone_sum = 0.0;
    double abs_q_collab_alone_sum = 0.0;
    for (int i = 0; i < num_agents_; ++i) {
      AgentForward& fwd = fb.agents[i];
      gather_batch(batch, i, fwd);

      // Target-side maxima for the TD target.
      const Mat<S> q_next = q_eval(targets_[i], targets_[i], fwd.xa2, fwd.toks2);
      fwd.qmax_next = q_next.colwise().maxCoeff().transpose();

      // Online forwards, traced for the backward pass.
      switch (cfg_.algo) {
        case Algo::kCollaQ: {
          fwd.q_alone = mlp_forward(params_[i], "alone", fwd.xa, &fwd.alone_trace);
          fwd.q_collab = collab_forward(params_[i], spec_, fwd.xa, fwd.toks, &fwd.collab_trace);
          fwd.shared_alone_pass = fwd.toks.empty();
          if (fwd.shared_alone_pass) {
            fwd.q_collab_alone = fwd.q_collab;
          } else {
            fwd.q_collab_alone =
                collab_forward(params_[i], spec_, fwd.xa, {}, &fwd.collab_alone_trace);
          }
          switch (cfg_.variant) {
            case Variant::kHard:
              fwd.q = fwd.q_alone + fwd.q_collab;
              break;
            case Variant::kSoft:
              fwd.q = fwd.shared_alone_pass
                          ? fwd.q_alone
                          : (fwd.q_alone + (fwd.q_collab - fwd.q_collab_alone)).eval();
              break;
            case Variant::kSoftTarget: {
              const Mat<S> sub = collab_forward(targets_[i], spec_, fwd.xa, {});
              fwd.q = fwd.q_alone + (fwd.q_collab - sub);
              break;
            }
          }
          abs_q_alone_sum += fwd.q_alone.cwiseAbs().sum();
          abs_q_collab_alone_sum += fwd.q_collab_alone.cwiseAbs().sum();
          break;
        }
        case Algo::kIql: {
          fwd.full_in = full_input(fwd.xa, fwd.toks);
          fwd.q_tower = mlp_forward(params_[i], "tower", fwd.full_in, &fwd.tower_trace);
          fwd.q = fwd.q_tower;
          abs_q_alone_sum += fwd.q.cwiseAbs().sum();
          break;
        }
        case Algo::kSumTwoNets: {
          fwd.full_in = full_input(fwd.xa, fwd.toks);
          fwd.q_tower = mlp_forward(params_[i], "tower_a", fwd.full_in, &fwd.tower_trace);
          fwd.q_tower_b = mlp_forward(params_[i], "tower_b", fwd.full_in, &fwd.tower_b_trace);
          fwd.q = fwd.q_tower + fwd.q_tower_b;
          abs_q_alone_sum += fwd.q.cwiseAbs().sum();
          break;
        }
      }
    }

    // TD targets, residual coefficients and the loss parts.
    double dqn_sum = 0.0;
    double mara_sum = 0.0;
    const double denom = static_cast<double>(b_count) * num_agents_;
    if (cfg_.mixer == Mixer::kNone) {
      fb.targets.assign(num_agents_, std::vector<double>(b_count, 0.0));
      fb.gcoef.assign(num_agents_, std::vector<double>(b_count, 0.0));
      for (int i = 0; i < num_agents_; ++i) {
        AgentForward& fwd = fb.agents[i];
        for (int b = 0; b < b_count; ++b) {
          const double y =
              fb.rewards[b] +
              (fb.dones[b] ? 0.0 : cfg_.gamma * static_cast<double>(fwd.qmax_next(b)));
          fb.targets[i][b] = y;
          const double diff = static_cast<double>(fwd.q(fwd.actions[b], b)) - y;
          dqn_sum += diff * diff;
          fb.gcoef[i][b] = 2.0 * diff / denom;
        }
      }
      dqn_sum /= denom;
    } else {
      // Additive mixer: regress the sum of per-agent Q values onto a single
      // joint target built from the summed maxima.
      fb.targets.assign(1, std::vector<double>(b_count, 0.0));
      fb.gcoef.assign(1, std::vector<double>(b_count, 0.0));
      for (int b = 0; b < b_count; ++b) {
        double max_sum = 0.0;
        double q_sum = 0.0;
        for (int i = 0; i < num_agents_; ++i) {
          max_sum += static_cast<double>(fb.agents[i].qmax_next(b));
          q_sum += static_cast<double>(fb.agents[i].q(fb.agents[i].actions[b], b));
        }
        const double y = fb.rewards[b] + (fb.dones[b] ? 0.0 : cfg_.gamma * max_sum);
        fb.targets[0][b] = y;
        const double diff = q_sum - y;
        dqn_sum += diff * diff;
        fb.gcoef[0][b] = 2.0 * diff / static_cast<double>(b_count);
      }
      dqn_sum /= static_cast<double>(b_count);
    }

    if (cfg_.algo == Algo::kCollaQ) {
      for (int i = 0; i < num_agents_; ++i) {
        const AgentForward& fwd = fb.agents[i];
        if (cfg_.mara_actions == MaraActions::kSampled) {
          for (int b = 0; b < b_count; ++b) {
            const double v = static_cast<double>(fwd.q_collab_alone(fwd.actions[b], b));
            mara_sum += v * v;
          }
        } else {
          mara_sum += static_cast<double>(
              fwd.q_collab_alone.template cast<double>().array().square().sum() / actions);
        }
      }
      mara_sum /= denom;
    }

    fb.parts.dqn = dqn_sum;
    fb.parts.mara = mara_sum;
    fb.parts.total = dqn_sum + cfg_.alpha * mara_sum;
    fb.mean_abs_q_alone = abs_q_alone_sum / (denom * actions);
    fb.mean_abs_q_collab_at_alone =
        cfg_.algo == Algo::kCollaQ ? abs_q_collab_alone_sum / (denom * actions) : 0.0;
    return fb;
  }

  void accumulate_gradients(const ForwardBundle& fb, int agent, ParamStore<S>& grads) const {
    const AgentForward& fwd = fb.agents[agent];
    const int b_count = static_cast<int>(fwd.actions.size());
    const int actions = num_actions();
    const std::vector<double>& gcoef =
        cfg_.mixer == Mixer::kNone ? fb.gcoef[agent] : fb.gcoef[0];

    Mat<S> upstream_q = Mat<S>::Zero(actions, b_count);
    for (int b = 0; b < b_count; ++b) {
      upstream_q(fwd.actions[b], b) = static_cast<S>(gcoef[b]);
    }

    switch (cfg_.algo) {
      case Algo::kIql:
        mlp_backward(params_[agent], "tower", fwd.tower_trace, upstream_q, grads);
        return;
      case Algo::kSumTwoNets:
        mlp_backward(params_[agent], "tower_a", fwd.tower_trace, upstream_q, grads);
        mlp_backward(params_[agent], "tower_b", fwd.tower_b_trace, upstream_q, grads);
        return;
      case Algo::kCollaQ:
        break;
    }

    mlp_backward(params_[agent], "alone", fwd.alone_trace, upstream_q, grads);

    // Upstream into collab(o_alone): the soft subtraction plus the MARA term.
    const double denom = static_cast<double>(b_count) * num_agents_;
    Mat<S> upstream_alone_pass = Mat<S>::Zero(actions, b_count);
    bool alone_pass_used = false;
    if (cfg_.variant == Variant::kSoft && !fwd.shared_alone_pass) {
      for (int b = 0; b < b_count; ++b) {
        upstream_alone_pass(fwd.actions[b], b) -= static_cast<S>(gcoef[b]);
      }
      alone_pass_used = true;
    }
    if (cfg_.alpha > 0.0) {
      if (cfg_.mara_actions == MaraActions::kSampled) {
        for (int b = 0; b < b_count; ++b) {
          upstream_alone_pass(fwd.actions[b], b) += static_cast<S>(
              2.0 * cfg_.alpha * static_cast<double>(fwd.q_collab_alone(fwd.actions[b], b)) /
              denom);
        }
      } else {
        upstream_alone_pass +=
            (fwd.q_collab_alone * static_cast<S>(2.0 * cfg_.alpha / (denom * actions))).eval();
      }
      alone_pass_used = true;
    }

    if (fwd.shared_alone_pass) {
      // Tokens were empty, so collab(o) and collab(o_alone) are one pass. In
      // the soft variant the DQN path cancels exactly and only the MARA
      // upstream remains.
      Mat<S> upstream = upstream_alone_pass;
      if (cfg_.variant != Variant::kSoft) upstream += upstream_q;
      collab_backward(params_[agent], spec_, fwd.collab_trace, upstream, grads);
      return;
    }

    collab_backward(params_[agent], spec_, fwd.collab_trace, upstream_q, grads);
    if (alone_pass_used) {
      collab_backward(params_[agent], spec_, fwd.collab_alone_trace, upstream_alone_pass, grads);
    }
  }

  void apply_rmsprop(int agent, const ParamStore<S>& grads) {
    const S decay = static_cast<S>(cfg_.rmsprop_decay);
    const S one_minus = static_cast<S>(1.0 - cfg_.rmsprop_decay);
    const S lr = static_cast<S>(cfg_.lr);
    const S stabilizer = static_cast<S>(cfg_.rmsprop_eps);
    auto& tensors = params_[agent].tensors();
    auto& rms = rms_[agent].tensors();
    const auto& g = grads.tensors();
    for (std::size_t t = 0; t < tensors.size(); ++t) {
      rms[t].value.array() =
          decay * rms[t].value.array() + one_minus * g[t].value.array().square();
      tensors[t].value.array() -=
          lr * g[t].value.array() / (rms[t].value.array().sqrt() + stabilizer);
    }
  }

  EnvConfig env_;
  TrainConfig cfg_;
  NetworkSpec spec_;
  int num_agents_ = 0;
  int alone_dim_ = 0;
  int token_dim_ = 0;
  std::vector<ParamStore<S>> params_;
  std::vector<ParamStore<S>> targets_;
  std::vector<ParamStore<S>> rms_;
  long long train_steps_ = 0;
  BatchStats last_stats_;
};

}  // namespace collaq
