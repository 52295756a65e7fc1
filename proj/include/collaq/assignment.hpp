#pragma once

// Exact solver for the joint reward-assignment objective over sparse reward
// sites, plus the local-assignment construction whose optimality gap is
// bounded by (gamma^C + gamma^D) * R_max * M * K.
//
// Values use the collect-once semantics of site_value.hpp. For a fixed
// action sequence the collected set is fixed, so V_i is a maximum of linear
// functions of the column amounts: convex. J(R) = sum_i V_i(s_i; r_i) is
// then a convex sum under per-site linear budgets and its maximum over the
// feasible polytope is attained at a vertex; vertices assign each site
// wholly to one agent (r = budget / w) or to none. The solver enumerates
// those vertices.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "collaq/mdp.hpp"
#include "collaq/rng.hpp"
#include "collaq/site_value.hpp"

namespace collaq {

inline constexpr double kAssignTol = 1e-9;

struct RewardSite {
  int state = 0;
  int action = 0;
  double budget = 0.0;  // external reward r_e at this (state, action), > 0
};

struct RewardSiteSet {
  std::vector<RewardSite> sites;

  int count() const { return static_cast<int>(sites.size()); }

  void validate(int num_states, int num_actions) const {
    for (std::size_t m = 0; m < sites.size(); ++m) {
      const RewardSite& site = sites[m];
      if (site.state < 0 || site.state >= num_states || site.action < 0 ||
          site.action >= num_actions)
        throw std::invalid_argument("RewardSiteSet: site " + std::to_string(m) + " out of range");
      if (!(site.budget > 0.0))
        throw std::invalid_argument("RewardSiteSet: site " + std::to_string(m) +
                                    " must have a positive budget");
      for (std::size_t k = 0; k < m; ++k) {
        if (sites[k].state == site.state && sites[k].action == site.action)
          throw std::invalid_argument("RewardSiteSet: duplicate (state, action) at site " +
                                      std::to_string(m));
      }
    }
  }
};

struct WeightMatrix {
  int num_sites = 0;
  int num_agents = 0;
  std::vector<double> w;  // (site * num_agents + agent), strictly positive

  static WeightMatrix ones(int num_sites, int num_agents) {
    WeightMatrix m;
    m.num_sites = num_sites;
    m.num_agents = num_agents;
    m.w.assign(static_cast<std::size_t>(num_sites) * num_agents, 1.0);
    return m;
  }

  double at(int site, int agent) const {
    return w[static_cast<std::size_t>(site) * num_agents + agent];
  }
  double& at(int site, int agent) {
    return w[static_cast<std::size_t>(site) * num_agents + agent];
  }

  void validate() const {
    if (w.size() != static_cast<std::size_t>(num_sites) * num_agents)
      throw std::invalid_argument("WeightMatrix: size mismatch");
    for (double x : w) {
      if (!(x > 0.0))
        throw std::invalid_argument("WeightMatrix: weights must be strictly positive");
    }
  }
};

/// M x K matrix of perceived rewards restricted to sites; column i is agent
/// i's perceived reward. Feasible when sum_i w[m,i] * r[m,i] <= budget(m).
struct AssignmentMatrix {
  int num_sites = 0;
  int num_agents = 0;
  std::vector<double> r;  // (site * num_agents + agent)

  static AssignmentMatrix zeros(int num_sites, int num_agents) {
    AssignmentMatrix m;
    m.num_sites = num_sites;
    m.num_agents = num_agents;
    m.r.assign(static_cast<std::size_t>(num_sites) * num_agents, 0.0);
    return m;
  }

  double at(int site, int agent) const {
    return r[static_cast<std::size_t>(site) * num_agents + agent];
  }
  double& at(int site, int agent) {
    return r[static_cast<std::size_t>(site) * num_agents + agent];
  }

  std::vector<double> column(int agent) const {
    std::vector<double> col(num_sites);
    for (int m = 0; m < num_sites; ++m) col[m] = at(m, agent);
    return col;
  }
};

/// Throws when R violates non-negativity or a site budget, naming the site.
inline void check_feasible(const RewardSiteSet& sites, const WeightMatrix& w,
                           const AssignmentMatrix& R) {
  if (R.num_sites != sites.count() || R.num_sites != w.num_sites || R.num_agents != w.num_agents)
    throw std::invalid_argument("check_feasible: dimension mismatch");
  for (int m = 0; m < R.num_sites; ++m) {
    double consumed = 0.0;
    for (int i = 0; i < R.num_agents; ++i) {
      if (R.at(m, i) < 0.0)
        throw std::invalid_argument("assignment infeasible: negative entry at site " +
                                    std::to_string(m) + ", agent " + std::to_string(i));
      consumed += w.at(m, i) * R.at(m, i);
    }
    if (consumed > sites.sites[m].budget + kAssignTol)
      throw std::invalid_argument("assignment infeasible at site " + std::to_string(m) +
                                  ": consumed " + std::to_string(consumed) + " > budget " +
                                  std::to_string(sites.sites[m].budget));
  }
}

/// One joint optimization instance: per-agent MDPs (shared discount), the
/// agents' current states, the sparse reward sites and the preference weights.
struct AssignmentInstance {
  std::vector<TabularMdp> mdps;
  std::vector<int> states;
  RewardSiteSet sites;
  WeightMatrix weights;

  int num_agents() const { return static_cast<int>(states.size()); }
  double discount() const { return mdps.front().discount; }

  void validate() const {
    if (mdps.empty() || mdps.size() != states.size())
      throw std::invalid_argument("AssignmentInstance: need one MDP and state per agent");
    for (std::size_t i = 0; i < mdps.size(); ++i) {
      mdps[i].validate();
      if (mdps[i].discount != mdps.front().discount)
        throw std::invalid_argument("AssignmentInstance: agents must share one discount");
      if (states[i] < 0 || states[i] >= mdps[i].num_states)
        throw std::invalid_argument("AssignmentInstance: agent state out of range");
      sites.validate(mdps[i].num_states, mdps[i].num_actions);
    }
    if (weights.num_sites != sites.count() || weights.num_agents != num_agents())
      throw std::invalid_argument("AssignmentInstance: weight matrix shape mismatch");
    weights.validate();
  }
};

/// One assignment column as a collect-once site list (zero entries dropped;
/// a zero-amount site never changes the optimum).
inline std::vector<SiteAmount> column_sites(const RewardSiteSet& sites,
                                            const std::vector<double>& column) {
  std::vector<SiteAmount> out;
  for (int m = 0; m < sites.count(); ++m) {
    if (column[m] == 0.0) continue;
    out.push_back({sites.sites[m].state, sites.sites[m].action, column[m]});
  }
  return out;
}

/// Perceived value of one column for one agent.
inline double column_value(const TabularMdp& mdp, const RewardSiteSet& sites,
                           const std::vector<double>& column, int state) {
  return site_value(mdp, column_sites(sites, column), state);
}

/// J(R) = sum_i V_i(s_i; r_i), each agent planning over its own column.
inline double objective_J(const AssignmentInstance& inst, const AssignmentMatrix& R) {
  check_feasible(inst.sites, inst.weights, R);
  double total = 0.0;
  for (int i = 0; i < inst.num_agents(); ++i) {
    total += column_value(inst.mdps[i], inst.sites, R.column(i), inst.states[i]);
  }
  return total;
}

/// Number of vertex patterns, saturating at max() on overflow.
inline std::uint64_t vertex_pattern_count(int num_sites, int num_agents) {
  std::uint64_t count = 1;
  const std::uint64_t base = static_cast<std::uint64_t>(num_agents) + 1;
  for (int m = 0; m < num_sites; ++m) {
    if (count > std::numeric_limits<std::uint64_t>::max() / base)
      return std::numeric_limits<std::uint64_t>::max();
    count *= base;
  }
  return count;
}

inline constexpr std::uint64_t kVertexEnumerationGuard = 10'000'000;

/// Streams all (K+1)^M vertex patterns in lexicographic order; pattern[m] is
/// -1 (unassigned) or the owning agent. Site 0 is the most significant digit
/// and "none" sorts before agent 0.
inline void enumerate_vertex_assignments(int num_sites, int num_agents,
                                         const std::function<void(const std::vector<int>&)>& fn) {
  if (num_sites < 1 || num_agents < 1)
    throw std::invalid_argument("enumerate_vertex_assignments: M and K must be at least 1");
  if (vertex_pattern_count(num_sites, num_agents) > kVertexEnumerationGuard)
    throw std::runtime_error(
        "enumerate_vertex_assignments: pattern count exceeds the enumeration guard; "
        "use solve_assignment_random_restart");
  std::vector<int> pattern(num_sites, -1);
  while (true) {
    fn(pattern);
    int m = num_sites - 1;
    while (m >= 0 && pattern[m] == num_agents - 1) {
      pattern[m] = -1;
      --m;
    }
    if (m < 0) break;
    ++pattern[m];
  }
}

/// Materializes a vertex pattern: site m is assigned wholly to pattern[m]
/// (r = budget / w) or left unassigned.
inline AssignmentMatrix assignment_from_pattern(const RewardSiteSet& sites,
                                                const WeightMatrix& w,
                                                const std::vector<int>& pattern) {
  AssignmentMatrix R = AssignmentMatrix::zeros(sites.count(), w.num_agents);
  for (int m = 0; m < sites.count(); ++m) {
    if (pattern[m] >= 0) R.at(m, pattern[m]) = sites.sites[m].budget / w.at(m, pattern[m]);
  }
  return R;
}

struct SolveResult {
  AssignmentMatrix assignment;
  double objective = 0.0;
  std::vector<int> pattern;
  bool exact = true;
};

namespace detail {

/// Per-agent value of owning a subset of sites. One collect-once DP per
/// agent (full budget/w amounts) serves every subset: a site outside the
/// starting mask is equivalent to an absent site.
class VertexValueCache {
 public:
  VertexValueCache(const AssignmentInstance& inst) : inst_(inst) {
    for (int i = 0; i < inst.num_agents(); ++i) {
      std::vector<SiteAmount> amounts;
      for (int m = 0; m < inst.sites.count(); ++m) {
        amounts.push_back({inst.sites.sites[m].state, inst.sites.sites[m].action,
                           inst.sites.sites[m].budget / inst.weights.at(m, i)});
      }
      dps_.emplace_back(inst.mdps[i], std::move(amounts));
    }
  }

  double value(int agent, std::uint32_t mask) {
    return dps_[agent].value(inst_.states[agent], mask, 0);
  }

 private:
  const AssignmentInstance& inst_;
  std::vector<SiteValue> dps_;
};

inline double pattern_objective(VertexValueCache& cache, const std::vector<int>& pattern,
                                int num_agents) {
  std::vector<std::uint32_t> masks(num_agents, 0);
  for (std::size_t m = 0; m < pattern.size(); ++m) {
    if (pattern[m] >= 0) masks[pattern[m]] |= 1u << m;
  }
  double total = 0.0;
  for (int i = 0; i < num_agents; ++i) total += cache.value(i, masks[i]);
  return total;
}

}  // namespace detail

/// Exact maximizer of J over vertex patterns. `allowed_agents` restricts the
/// candidate owners (used by the local solve); empty means all agents. Ties
/// keep the lexicographically smallest pattern.
inline SolveResult solve_assignment(const AssignmentInstance& inst,
                                    const std::vector<int>& allowed_agents = {}) {
  inst.validate();
  const int num_sites = inst.sites.count();
  if (num_sites > 31)
    throw std::runtime_error("solve_assignment: more than 31 sites is unsupported");
  std::vector<int> candidates = allowed_agents;
  if (candidates.empty()) {
    candidates.resize(inst.num_agents());
    for (int i = 0; i < inst.num_agents(); ++i) candidates[i] = i;
  }
  if (vertex_pattern_count(num_sites, static_cast<int>(candidates.size())) >
      kVertexEnumerationGuard)
    throw std::runtime_error(
        "solve_assignment: pattern count exceeds the enumeration guard; "
        "use solve_assignment_random_restart");

  detail::VertexValueCache cache(inst);
  SolveResult best;
  best.objective = -std::numeric_limits<double>::infinity();
  // Enumerate over candidate indices, then translate digits to agent ids;
  // candidate order preserves the none < agent ... lexicographic rule.
  enumerate_vertex_assignments(
      num_sites, static_cast<int>(candidates.size()), [&](const std::vector<int>& digits) {
        std::vector<int> pattern(num_sites, -1);
        for (int m = 0; m < num_sites; ++m) {
          if (digits[m] >= 0) pattern[m] = candidates[digits[m]];
        }
        const double j = detail::pattern_objective(cache, pattern, inst.num_agents());
        if (j > best.objective) {
          best.objective = j;
          best.pattern = pattern;
        }
      });
  best.assignment = assignment_from_pattern(inst.sites, inst.weights, best.pattern);
  best.exact = true;
  return best;
}

/// Seeded random-restart coordinate ascent over vertex patterns; the fallback
/// above the enumeration guard. Results are approximate and labeled as such.
inline SolveResult solve_assignment_random_restart(const AssignmentInstance& inst, Rng& rng,
                                                   int restarts = 32) {
  inst.validate();
  const int num_sites = inst.sites.count();
  const int num_agents = inst.num_agents();
  if (num_sites > 31)
    throw std::runtime_error("solve_assignment_random_restart: more than 31 sites is unsupported");
  detail::VertexValueCache cache(inst);
  SolveResult best;
  best.objective = -std::numeric_limits<double>::infinity();
  for (int attempt = 0; attempt < restarts; ++attempt) {
    std::vector<int> pattern(num_sites);
    for (int m = 0; m < num_sites; ++m) pattern[m] = rng.uniform_int(num_agents + 1) - 1;
    double current = detail::pattern_objective(cache, pattern, num_agents);
    bool improved = true;
    while (improved) {
      improved = false;
      for (int m = 0; m < num_sites; ++m) {
        const int original = pattern[m];
        int best_digit = original;
        for (int digit = -1; digit < num_agents; ++digit) {
          if (digit == original) continue;
          pattern[m] = digit;
          const double j = detail::pattern_objective(cache, pattern, num_agents);
          if (j > current) {
            current = j;
            best_digit = digit;
            improved = true;
          }
        }
        pattern[m] = best_digit;
      }
    }
    if (current > best.objective) {
      best.objective = current;
      best.pattern = pattern;
    }
  }
  best.assignment = assignment_from_pattern(inst.sites, inst.weights, best.pattern);
  best.exact = false;
  return best;
}

/// Zeroes a column outside the local site set.
inline std::vector<double> truncate_to_local(const std::vector<double>& column,
                                             const std::vector<int>& local_sites) {
  std::vector<double> out(column.size(), 0.0);
  for (int m : local_sites) {
    if (m < 0 || m >= static_cast<int>(column.size()))
      throw std::invalid_argument("truncate_to_local: site index out of range");
    out[m] = column[m];
  }
  return out;
}

/// Locality data for one ego agent and its local buddies: the union of the
/// agents' vicinities B_j(C) and the distance D to the nearest remote agent.
struct LocalitySpec {
  std::vector<int> local_agents;        // sorted; contains the ego agent
  int vicinity = 0;                     // C
  std::vector<int> local_sites;         // sorted site indices, union of B_j(C)
  std::optional<int> remote_distance;   // D; empty when there are no remote agents

  bool is_local(int agent) const {
    return std::find(local_agents.begin(), local_agents.end(), agent) != local_agents.end();
  }
  bool is_local_site(int site) const {
    return std::find(local_sites.begin(), local_sites.end(), site) != local_sites.end();
  }
};

/// B_j(C) = sites whose state lies within shortest-path distance C of s_j;
/// M_local is the union over local agents; D = min over local sites x and
/// remote agents j of dist(s_j, x).
inline LocalitySpec locality_from_states(const AssignmentInstance& inst,
                                         const std::vector<int>& local_agents, int vicinity) {
  if (vicinity < 0) throw std::invalid_argument("locality_from_states: C must be non-negative");
  if (local_agents.empty())
    throw std::invalid_argument("locality_from_states: local set must contain the ego agent");
  LocalitySpec spec;
  spec.local_agents = local_agents;
  std::sort(spec.local_agents.begin(), spec.local_agents.end());
  spec.vicinity = vicinity;

  std::vector<bool> in_local(inst.sites.count(), false);
  for (int j : spec.local_agents) {
    const auto dist = bfs_distances(inst.mdps[j], inst.states[j]);
    for (int m = 0; m < inst.sites.count(); ++m) {
      const auto d = dist[inst.sites.sites[m].state];
      if (d && *d <= vicinity) in_local[m] = true;
    }
  }
  for (int m = 0; m < inst.sites.count(); ++m) {
    if (in_local[m]) spec.local_sites.push_back(m);
  }

  // D over reachable (local site, remote agent) pairs; empty min means no
  // movement cost, so gamma^D contributes 0 and the sentinel stays unset.
  for (int j = 0; j < inst.num_agents(); ++j) {
    if (spec.is_local(j)) continue;
    const auto dist = bfs_distances(inst.mdps[j], inst.states[j]);
    for (int m : spec.local_sites) {
      const auto d = dist[inst.sites.sites[m].state];
      if (d && (!spec.remote_distance || *d < *spec.remote_distance)) spec.remote_distance = *d;
    }
  }
  return spec;
}

/// Theorem-style construction of R-hat: push local-site budget held by remote
/// agents to the nearest local agent, re-solve over local columns, zero the
/// cross regions, and join local with remote columns (disjoint site support).
inline AssignmentMatrix construct_local_assignment(const AssignmentInstance& inst,
                                                   const AssignmentMatrix& r_star,
                                                   const LocalitySpec& loc) {
  check_feasible(inst.sites, inst.weights, r_star);
  const int num_sites = inst.sites.count();
  const int num_agents = inst.num_agents();
  const bool remote_empty = static_cast<int>(loc.local_agents.size()) == num_agents;
  if (remote_empty) {
    // Nothing to decouple from; the local solve over all agents is the
    // original optimum.
    return r_star;
  }

  // Pushed solution: move [local sites, remote agents] budget to the nearest
  // local agent (w-weighted so the consumed budget is preserved).
  AssignmentMatrix pushed = r_star;
  for (int m : loc.local_sites) {
    for (int j = 0; j < num_agents; ++j) {
      if (loc.is_local(j) || pushed.at(m, j) <= 0.0) continue;
      int nearest = -1;
      std::optional<int> nearest_dist;
      for (int l : loc.local_agents) {
        const auto d =
            shortest_path_distance(inst.mdps[l], inst.states[l], inst.sites.sites[m].state);
        if (!d) continue;
        if (!nearest_dist || *d < *nearest_dist) {
          nearest_dist = *d;
          nearest = l;
        }
      }
      if (nearest < 0) nearest = loc.local_agents.front();
      pushed.at(m, nearest) +=
          inst.weights.at(m, j) * pushed.at(m, j) / inst.weights.at(m, nearest);
      pushed.at(m, j) = 0.0;
    }
  }

  // pushed_zeroed: remote-site rows cleared for local agents.
  AssignmentMatrix pushed_zeroed = pushed;
  for (int m = 0; m < num_sites; ++m) {
    if (loc.is_local_site(m)) continue;
    for (int l : loc.local_agents) pushed_zeroed.at(m, l) = 0.0;
  }

  // Local optimum: remote columns forced to zero, then the same zeroing.
  SolveResult local = solve_assignment(inst, loc.local_agents);
  AssignmentMatrix local_zeroed = local.assignment;
  for (int m = 0; m < num_sites; ++m) {
    if (loc.is_local_site(m)) continue;
    for (int l : loc.local_agents) local_zeroed.at(m, l) = 0.0;
  }

  // Join: local columns from the zeroed local optimum, remote columns from
  // the pushed-and-zeroed solution.
  AssignmentMatrix r_hat = AssignmentMatrix::zeros(num_sites, num_agents);
  for (int m = 0; m < num_sites; ++m) {
    for (int i = 0; i < num_agents; ++i) {
      r_hat.at(m, i) = loc.is_local(i) ? local_zeroed.at(m, i) : pushed_zeroed.at(m, i);
    }
  }
  check_feasible(inst.sites, inst.weights, r_hat);
  return r_hat;
}

/// Largest per-site reward assignable to any single agent under the weights.
inline double reward_r_max(const RewardSiteSet& sites, const WeightMatrix& w) {
  double r_max = 0.0;
  for (int m = 0; m < sites.count(); ++m) {
    for (int i = 0; i < w.num_agents; ++i) {
      r_max = std::max(r_max, sites.sites[m].budget / w.at(m, i));
    }
  }
  return r_max;
}

struct GapReport {
  double j_star = 0.0;
  double j_hat = 0.0;
  double bound = 0.0;
  double r_max = 0.0;
  bool holds = false;
  int vicinity = 0;                    // C
  std::optional<int> remote_distance;  // D; empty = no remote agents (gamma^D := 0)
  int num_sites = 0;
  int num_agents = 0;
};

/// Numeric check of the optimality-gap bound:
/// J(R-hat) >= J(R*) - (gamma^C + gamma^D) * R_max * M * K.
inline GapReport theorem1_gap_check(const AssignmentInstance& inst,
                                    const std::vector<int>& local_agents, int vicinity) {
  const SolveResult opt = solve_assignment(inst);
  const LocalitySpec loc = locality_from_states(inst, local_agents, vicinity);
  const AssignmentMatrix r_hat = construct_local_assignment(inst, opt.assignment, loc);

  GapReport report;
  report.j_star = opt.objective;
  report.j_hat = objective_J(inst, r_hat);
  report.r_max = reward_r_max(inst.sites, inst.weights);
  report.vicinity = vicinity;
  report.remote_distance = loc.remote_distance;
  report.num_sites = inst.sites.count();
  report.num_agents = inst.num_agents();
  const double gamma = inst.discount();
  const double gamma_c = std::pow(gamma, vicinity);
  const double gamma_d = loc.remote_distance ? std::pow(gamma, *loc.remote_distance) : 0.0;
  report.bound = (gamma_c + gamma_d) * report.r_max * report.num_sites * report.num_agents;
  report.holds = report.j_hat >= report.j_star - report.bound - kAssignTol;
  return report;
}

}  // namespace collaq
