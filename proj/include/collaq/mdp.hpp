#pragma once

// Deterministic tabular MDPs, finite-horizon value iteration, shortest-path
// distances and the value-perturbation bound the assignment oracle builds on.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

namespace collaq {

// Grid action order is fixed; all tie-breaks take the lowest index.
enum GridAction : int { kUp = 0, kDown = 1, kLeft = 2, kRight = 3, kStay = 4 };
inline constexpr int kGridActionCount = 5;

/// Moves one step on a width x height grid with border clamping.
/// States are cells in row-major order: state = row * width + col.
inline int grid_move(int cell, int action, int width, int height) {
  int row = cell / width;
  int col = cell % width;
  switch (action) {
    case kUp: row = std::max(row - 1, 0); break;
    case kDown: row = std::min(row + 1, height - 1); break;
    case kLeft: col = std::max(col - 1, 0); break;
    case kRight: col = std::min(col + 1, width - 1); break;
    case kStay: break;
    default: throw std::invalid_argument("grid_move: unknown action " + std::to_string(action));
  }
  return row * width + col;
}

struct TabularMdp {
  int num_states = 0;
  int num_actions = 0;
  std::vector<int> transition;  // (state * num_actions + action) -> next state
  int horizon = 0;              // number of backup steps; values at step H are terminal
  double discount = 0.0;        // strictly inside (0, 1)

  int next_state(int state, int action) const {
    return transition[static_cast<std::size_t>(state) * num_actions + action];
  }

  void validate() const {
    if (num_states <= 0 || num_actions <= 0)
      throw std::invalid_argument("TabularMdp: state and action sets must be non-empty");
    if (horizon < 0) throw std::invalid_argument("TabularMdp: horizon must be non-negative");
    if (!(discount > 0.0 && discount < 1.0))
      throw std::invalid_argument("TabularMdp: discount must lie strictly in (0, 1)");
    if (transition.size() != static_cast<std::size_t>(num_states) * num_actions)
      throw std::invalid_argument("TabularMdp: transition table size mismatch");
    for (int next : transition) {
      if (next < 0 || next >= num_states)
        throw std::invalid_argument("TabularMdp: transition leaves the state set");
    }
  }
};

/// Dense reward over (state, action) pairs.
struct RewardVector {
  int num_states = 0;
  int num_actions = 0;
  std::vector<double> entries;  // (state * num_actions + action)
  bool non_negative = false;

  static RewardVector zeros(int num_states, int num_actions, bool non_negative = false) {
    RewardVector r;
    r.num_states = num_states;
    r.num_actions = num_actions;
    r.entries.assign(static_cast<std::size_t>(num_states) * num_actions, 0.0);
    r.non_negative = non_negative;
    return r;
  }

  double& at(int state, int action) {
    return entries[static_cast<std::size_t>(state) * num_actions + action];
  }
  double at(int state, int action) const {
    return entries[static_cast<std::size_t>(state) * num_actions + action];
  }

  bool sized_for(const TabularMdp& mdp) const {
    return num_states == mdp.num_states && num_actions == mdp.num_actions &&
           entries.size() == static_cast<std::size_t>(num_states) * num_actions;
  }

  void check_invariants() const {
    if (!non_negative) return;
    for (double e : entries) {
      if (e < 0.0) throw std::invalid_argument("RewardVector: negative entry in a non-negative vector");
    }
  }
};

/// Optimal values for every (step, state); step runs 0..horizon inclusive.
struct ValueTable {
  int num_states = 0;
  int horizon = 0;
  std::vector<double> values;  // (step * num_states + state)

  double at(int step, int state) const {
    return values[static_cast<std::size_t>(step) * num_states + state];
  }
  double& at(int step, int state) {
    return values[static_cast<std::size_t>(step) * num_states + state];
  }
};

/// Single-agent projection of the gridworld. States are cells in row-major
/// order; actions are (up, down, left, right, stay) with border clamping.
inline TabularMdp build_grid_mdp(int width, int height, double discount, int horizon) {
  if (width <= 0 || height <= 0)
    throw std::invalid_argument("build_grid_mdp: grid dimensions must be positive");
  TabularMdp mdp;
  mdp.num_states = width * height;
  mdp.num_actions = kGridActionCount;
  mdp.horizon = horizon;
  mdp.discount = discount;
  mdp.transition.resize(static_cast<std::size_t>(mdp.num_states) * mdp.num_actions);
  for (int cell = 0; cell < mdp.num_states; ++cell) {
    for (int a = 0; a < kGridActionCount; ++a) {
      mdp.transition[static_cast<std::size_t>(cell) * kGridActionCount + a] =
          grid_move(cell, a, width, height);
    }
  }
  mdp.validate();
  return mdp;
}

/// Breadth-first distances from `from` to every state; nullopt = unreachable.
inline std::vector<std::optional<int>> bfs_distances(const TabularMdp& mdp, int from) {
  if (from < 0 || from >= mdp.num_states)
    throw std::invalid_argument("bfs_distances: state out of range");
  std::vector<std::optional<int>> dist(mdp.num_states);
  std::queue<int> frontier;
  dist[from] = 0;
  frontier.push(from);
  while (!frontier.empty()) {
    int s = frontier.front();
    frontier.pop();
    for (int a = 0; a < mdp.num_actions; ++a) {
      int next = mdp.next_state(s, a);
      if (!dist[next]) {
        dist[next] = *dist[s] + 1;
        frontier.push(next);
      }
    }
  }
  return dist;
}

/// Minimal number of transitions from `from` to `to`; nullopt = unreachable.
inline std::optional<int> shortest_path_distance(const TabularMdp& mdp, int from, int to) {
  if (to < 0 || to >= mdp.num_states)
    throw std::invalid_argument("shortest_path_distance: state out of range");
  return bfs_distances(mdp, from)[to];
}

/// Exact finite-horizon backward induction. Values at step H are zero; each
/// earlier step is one Bellman backup (transitions are deterministic, so the
/// expectation is a point evaluation).
inline ValueTable value_iteration(const TabularMdp& mdp, const RewardVector& r) {
  if (!r.sized_for(mdp))
    throw std::invalid_argument("value_iteration: reward sized for a different MDP");
  r.check_invariants();
  ValueTable v;
  v.num_states = mdp.num_states;
  v.horizon = mdp.horizon;
  v.values.assign(static_cast<std::size_t>(mdp.horizon + 1) * mdp.num_states, 0.0);
  for (int h = mdp.horizon - 1; h >= 0; --h) {
    for (int s = 0; s < mdp.num_states; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      for (int a = 0; a < mdp.num_actions; ++a) {
        double q = r.at(s, a) + mdp.discount * v.at(h + 1, mdp.next_state(s, a));
        if (q > best) best = q;
      }
      v.at(h, s) = best;
    }
  }
  return v;
}

/// Argmax of r(x,a) + gamma * V_{h+1}(T(x,a)); ties take the lowest action.
inline int greedy_action(const TabularMdp& mdp, const RewardVector& r, const ValueTable& v,
                         int state, int step) {
  if (state < 0 || state >= mdp.num_states)
    throw std::invalid_argument("greedy_action: state out of range");
  if (step < 0 || step >= mdp.horizon)
    throw std::invalid_argument("greedy_action: no action is defined at step " +
                                std::to_string(step));
  if (!r.sized_for(mdp)) throw std::invalid_argument("greedy_action: reward size mismatch");
  int best_action = 0;
  double best = -std::numeric_limits<double>::infinity();
  for (int a = 0; a < mdp.num_actions; ++a) {
    double q = r.at(state, a) + mdp.discount * v.at(step + 1, mdp.next_state(state, a));
    if (q > best) {
      best = q;
      best_action = a;
    }
  }
  return best_action;
}

}  // namespace collaq
