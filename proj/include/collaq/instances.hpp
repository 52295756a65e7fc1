#pragma once

// Random problem instances and the property sweeps the `lemmas` subcommand
// and the acceptance suite run: the max-perturbation inequality, the
// distance-discounted value bound, the remote-reward truncation bound and
// random joint-assignment instances for the optimality checks.

#include <cmath>
#include <vector>

#include "collaq/assignment.hpp"
#include "collaq/mdp.hpp"
#include "collaq/rng.hpp"

namespace collaq {

struct LemmaCase {
  TabularMdp mdp;
  int state = 0;
  RewardVector r1;
  RewardVector r2;
};

/// Random grid up to 5x5, horizon up to 8, discount in {0.5, 0.9, 0.992}.
/// Rewards are sparse (the regime the bound is about): r1 holds a handful of
/// sites, r2 perturbs some of them and may add new ones.
inline LemmaCase random_lemma_case(Rng& rng) {
  static const double gammas[] = {0.5, 0.9, 0.992};
  LemmaCase c;
  const int width = 1 + rng.uniform_int(5);
  const int height = 1 + rng.uniform_int(5);
  const double gamma = gammas[rng.uniform_int(3)];
  const int horizon = 1 + rng.uniform_int(8);
  c.mdp = build_grid_mdp(width, height, gamma, horizon);
  c.state = rng.uniform_int(c.mdp.num_states);
  c.r1 = RewardVector::zeros(c.mdp.num_states, c.mdp.num_actions);
  c.r2 = RewardVector::zeros(c.mdp.num_states, c.mdp.num_actions);
  const int entries = static_cast<int>(c.r1.entries.size());
  const int base_sites = 1 + rng.uniform_int(std::min(6, entries));
  for (int m = 0; m < base_sites; ++m) {
    const int idx = rng.uniform_int(entries);
    c.r1.entries[idx] = rng.uniform(-5.0, 5.0);
    c.r2.entries[idx] = rng.uniform_int(2) == 0 ? c.r1.entries[idx]
                                                : c.r1.entries[idx] + rng.uniform(-3.0, 3.0);
  }
  const int extra_sites = rng.uniform_int(3);
  for (int m = 0; m < extra_sites; ++m) {
    c.r2.entries[rng.uniform_int(entries)] = rng.uniform(-5.0, 5.0);
  }
  return c;
}

struct SweepOutcome {
  int total = 0;
  int held = 0;
  bool ok() const { return held == total; }
};

/// 0 <= max(a1', a2) - max(a1, a2) <= a1' - a1 whenever a1' >= a1; exact in
/// IEEE arithmetic because the subtractions are correctly rounded.
inline SweepOutcome lemma_max_sweep(int trials, Rng& rng) {
  SweepOutcome out;
  out.total = trials;
  for (int t = 0; t < trials; ++t) {
    const double a1 = rng.uniform(-10.0, 10.0);
    const double a2 = rng.uniform(-10.0, 10.0);
    const double a1p = a1 + rng.uniform(0.0, 10.0);
    const double diff = std::max(a1p, a2) - std::max(a1, a2);
    if (diff >= 0.0 && diff <= a1p - a1) ++out.held;
  }
  return out;
}

inline SweepOutcome lemma_bound_sweep(int trials, Rng& rng) {
  SweepOutcome out;
  out.total = trials;
  for (int t = 0; t < trials; ++t) {
    const LemmaCase c = random_lemma_case(rng);
    if (lemma_bound_check(c.mdp, c.state, c.r1, c.r2).holds) ++out.held;
  }
  return out;
}

struct OracleInstance {
  AssignmentInstance instance;
  std::vector<int> local_agents;
  int vicinity = 0;  // C
};

/// Random joint instance: shared grid up to `max_grid`, K <= max_agents,
/// M <= max_sites, unit or random weights, local set always containing
/// agent 0.
inline OracleInstance random_oracle_instance(Rng& rng, int max_grid = 6, int max_agents = 3,
                                             int max_sites = 4) {
  static const double gammas[] = {0.9, 0.992};
  OracleInstance oi;
  const int width = 2 + rng.uniform_int(max_grid - 1);
  const int height = 2 + rng.uniform_int(max_grid - 1);
  const double gamma = gammas[rng.uniform_int(2)];
  const int horizon = 6 + rng.uniform_int(7);
  const TabularMdp mdp = build_grid_mdp(width, height, gamma, horizon);
  const int num_agents = 1 + rng.uniform_int(max_agents);
  const int num_sites = 1 + rng.uniform_int(max_sites);

  AssignmentInstance& inst = oi.instance;
  for (int i = 0; i < num_agents; ++i) {
    inst.mdps.push_back(mdp);
    inst.states.push_back(rng.uniform_int(mdp.num_states));
  }
  while (inst.sites.count() < num_sites) {
    RewardSite site;
    site.state = rng.uniform_int(mdp.num_states);
    site.action = rng.uniform_int(mdp.num_actions);
    bool duplicate = false;
    for (const RewardSite& existing : inst.sites.sites) {
      duplicate |= existing.state == site.state && existing.action == site.action;
    }
    if (duplicate) continue;
    site.budget = rng.uniform(0.5, 10.0);
    inst.sites.sites.push_back(site);
  }
  inst.weights = WeightMatrix::ones(num_sites, num_agents);
  if (rng.uniform_int(2) == 0) {
    for (double& w : inst.weights.w) w = rng.uniform(0.5, 2.0);
  }
  inst.validate();

  oi.local_agents.push_back(0);
  for (int i = 1; i < num_agents; ++i) {
    if (rng.uniform_int(2) == 0) oi.local_agents.push_back(i);
  }
  oi.vicinity = rng.uniform_int(5);
  return oi;
}

/// Random feasible interior point: every site spends a random fraction of
/// its budget split across agents.
inline AssignmentMatrix random_feasible_assignment(const AssignmentInstance& inst, Rng& rng) {
  const int num_sites = inst.sites.count();
  const int num_agents = inst.num_agents();
  AssignmentMatrix R = AssignmentMatrix::zeros(num_sites, num_agents);
  for (int m = 0; m < num_sites; ++m) {
    std::vector<double> share(num_agents);
    double total = 0.0;
    for (int i = 0; i < num_agents; ++i) {
      share[i] = rng.next_double();
      total += share[i];
    }
    const double slack = rng.next_double();  // spend this fraction of the budget
    if (total <= 0.0) continue;
    for (int i = 0; i < num_agents; ++i) {
      const double consumed = slack * inst.sites.sites[m].budget * share[i] / total;
      R.at(m, i) = consumed / inst.weights.at(m, i);
    }
  }
  return R;
}

/// Truncation bound (the remote-reward lemma): zeroing a feasible column
/// outside a local set containing the agent's C-vicinity moves the value by
/// at most gamma^C * R_max * M.
inline SweepOutcome lemma_remote_reward_sweep(int trials, Rng& rng) {
  SweepOutcome out;
  out.total = trials;
  for (int t = 0; t < trials; ++t) {
    const OracleInstance oi = random_oracle_instance(rng);
    const AssignmentInstance& inst = oi.instance;
    const int agent = 0;
    const AssignmentMatrix R = random_feasible_assignment(inst, rng);
    const std::vector<double> column = R.column(agent);

    // Local set: the agent's own C-vicinity, optionally widened.
    std::vector<int> local_sites;
    const auto dist = bfs_distances(inst.mdps[agent], inst.states[agent]);
    for (int m = 0; m < inst.sites.count(); ++m) {
      const auto d = dist[inst.sites.sites[m].state];
      const bool in_vicinity = d && *d <= oi.vicinity;
      if (in_vicinity || rng.uniform_int(4) == 0) local_sites.push_back(m);
    }
    const std::vector<double> truncated = truncate_to_local(column, local_sites);

    const double v_full = column_value(inst.mdps[agent], inst.sites, column, inst.states[agent]);
    const double v_trunc =
        column_value(inst.mdps[agent], inst.sites, truncated, inst.states[agent]);
    const double bound = std::pow(inst.discount(), oi.vicinity) *
                         reward_r_max(inst.sites, inst.weights) * inst.sites.count();
    if (std::abs(v_full - v_trunc) <= bound + kAssignTol) ++out.held;
  }
  return out;
}

/// Theorem sweep: the constructed local assignment stays within the
/// (gamma^C + gamma^D) R_max M K gap on every random instance.
inline SweepOutcome theorem_gap_sweep(int trials, Rng& rng) {
  SweepOutcome out;
  out.total = trials;
  for (int t = 0; t < trials; ++t) {
    const OracleInstance oi = random_oracle_instance(rng);
    const GapReport report = theorem1_gap_check(oi.instance, oi.local_agents, oi.vicinity);
    if (report.holds) ++out.held;
  }
  return out;
}

}  // namespace collaq
