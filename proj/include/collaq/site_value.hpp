#pragma once

// Exact optimal value when each rewarded (state, action) pair pays out at
// most once. This is the semantics under which the distance-discounted
// perturbation bounds are theorems: a reward entry can contribute at most
// gamma^{dist} once, never a revisit series. Computed by memoized dynamic
// programming over (state, remaining-site mask, step).

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "collaq/mdp.hpp"

namespace collaq {

struct SiteAmount {
  int state = 0;
  int action = 0;
  double amount = 0.0;
};

inline constexpr int kMaxValueSites = 24;

class SiteValue {
 public:
  SiteValue(const TabularMdp& mdp, std::vector<SiteAmount> sites)
      : mdp_(mdp), sites_(std::move(sites)) {
    if (static_cast<int>(sites_.size()) > kMaxValueSites)
      throw std::invalid_argument("SiteValue: too many reward sites for the mask DP");
    site_at_.assign(static_cast<std::size_t>(mdp_.num_states) * mdp_.num_actions, -1);
    for (std::size_t m = 0; m < sites_.size(); ++m) {
      const SiteAmount& s = sites_[m];
      if (s.state < 0 || s.state >= mdp_.num_states || s.action < 0 ||
          s.action >= mdp_.num_actions)
        throw std::invalid_argument("SiteValue: site out of range");
      auto& slot = site_at_[static_cast<std::size_t>(s.state) * mdp_.num_actions + s.action];
      if (slot != -1) throw std::invalid_argument("SiteValue: duplicate (state, action) site");
      slot = static_cast<int>(m);
    }
  }

  std::uint32_t full_mask() const {
    return sites_.empty() ? 0u : (sites_.size() == 32 ? ~0u : (1u << sites_.size()) - 1u);
  }

  /// V(state) at `step` with `remaining` sites still collectible.
  double value(int state, std::uint32_t remaining, int step) {
    if (state < 0 || state >= mdp_.num_states)
      throw std::invalid_argument("SiteValue: state out of range");
    if (step >= mdp_.horizon) return 0.0;
    const std::uint64_t key =
        ((static_cast<std::uint64_t>(step) * mdp_.num_states + state) << kMaxValueSites) |
        remaining;
    auto it = memo_.find(key);
    if (it != memo_.end()) return it->second;
    double best = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < mdp_.num_actions; ++a) {
      const int site = site_at_[static_cast<std::size_t>(state) * mdp_.num_actions + a];
      double reward = 0.0;
      std::uint32_t next_mask = remaining;
      if (site >= 0 && (remaining & (1u << site))) {
        reward = sites_[site].amount;
        next_mask = remaining & ~(1u << site);
      }
      const double v =
          reward + mdp_.discount * value(mdp_.next_state(state, a), next_mask, step + 1);
      if (v > best) best = v;
    }
    memo_.emplace(key, best);
    return best;
  }

  double value(int state) { return value(state, full_mask(), 0); }

 private:
  TabularMdp mdp_;
  std::vector<SiteAmount> sites_;
  std::vector<int> site_at_;
  std::unordered_map<std::uint64_t, double> memo_;
};

/// One-shot helper for a single start state.
inline double site_value(const TabularMdp& mdp, const std::vector<SiteAmount>& sites,
                         int start_state) {
  SiteValue dp(mdp, sites);
  return dp.value(start_state);
}

struct LemmaBoundReport {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
};

/// Checks |V(s; r1) - V(s; r2)| <= sum over (x,a) of gamma^{dist(s,x)} times
/// |r1(x,a) - r2(x,a)| under collect-once values (the bound is false for
/// per-visit repeatable rewards: parking on a rewarded pair replays it as a
/// geometric series). The union support of r1 and r2 must fit the mask DP;
/// unreachable states cannot influence V(s) and contribute nothing.
inline LemmaBoundReport lemma_bound_check(const TabularMdp& mdp, int state,
                                          const RewardVector& r1, const RewardVector& r2) {
  if (!r1.sized_for(mdp) || !r2.sized_for(mdp))
    throw std::invalid_argument("lemma_bound_check: reward size mismatch");

  std::vector<SiteAmount> support1, support2;
  for (int x = 0; x < mdp.num_states; ++x) {
    for (int a = 0; a < mdp.num_actions; ++a) {
      if (r1.at(x, a) == 0.0 && r2.at(x, a) == 0.0) continue;
      support1.push_back({x, a, r1.at(x, a)});
      support2.push_back({x, a, r2.at(x, a)});
    }
  }
  if (static_cast<int>(support1.size()) > kMaxValueSites)
    throw std::invalid_argument("lemma_bound_check: union reward support exceeds " +
                                std::to_string(kMaxValueSites) + " sites");

  LemmaBoundReport report;
  report.lhs = std::abs(site_value(mdp, support1, state) - site_value(mdp, support2, state));
  const std::vector<std::optional<int>> dist = bfs_distances(mdp, state);
  for (const SiteAmount& s : support1) {
    if (!dist[s.state]) continue;
    report.rhs += std::pow(mdp.discount, *dist[s.state]) * std::abs(s.amount - r2.at(s.state, s.action));
  }
  report.holds = report.lhs <= report.rhs + 1e-9;
  return report;
}

}  // namespace collaq
