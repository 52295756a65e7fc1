#pragma once

// Multi-agent resource-collection gridworld. Every episode draws a fresh
// reward table that all agents can see; the team shares the reward of every
// collected resource. Observations carry no agent IDs: identity is conveyed
// only through an agent's reward row.

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

#include "collaq/mdp.hpp"
#include "collaq/rng.hpp"

namespace collaq {

enum class RewardSampler { kRankedRandom, kFixed, kReversedRanking };

inline std::string to_string(RewardSampler s) {
  switch (s) {
    case RewardSampler::kRankedRandom: return "ranked_random";
    case RewardSampler::kFixed: return "fixed";
    case RewardSampler::kReversedRanking: return "reversed_ranking";
  }
  return "?";
}

/// Team reward rho[type][agent] earned when `agent` collects a `type` resource.
struct RewardTable {
  int num_types = 0;
  int num_agents = 0;
  std::vector<double> rho;  // (type * num_agents + agent)

  static RewardTable zeros(int num_types, int num_agents) {
    RewardTable t;
    t.num_types = num_types;
    t.num_agents = num_agents;
    t.rho.assign(static_cast<std::size_t>(num_types) * num_agents, 0.0);
    return t;
  }

  double at(int type, int agent) const {
    return rho[static_cast<std::size_t>(type) * num_agents + agent];
  }
  double& at(int type, int agent) {
    return rho[static_cast<std::size_t>(type) * num_agents + agent];
  }

  bool operator==(const RewardTable& other) const {
    return num_types == other.num_types && num_agents == other.num_agents && rho == other.rho;
  }
};

struct EnvConfig {
  int width = 7;
  int height = 7;
  int num_agents = 3;
  int resource_types = 2;  // type 0 = "lemon", type 1 = "apple" when T = 2
  int num_sites = 4;
  int step_cap = 50;
  RewardSampler sampler = RewardSampler::kRankedRandom;
  double rho_max = 10.0;
  std::vector<double> fixed_rho;  // T*K row-major; used when sampler == kFixed

  int cells() const { return width * height; }

  void validate() const {
    if (width <= 0 || height <= 0)
      throw std::invalid_argument("EnvConfig: grid dimensions must be positive");
    if (num_agents < 1) throw std::invalid_argument("EnvConfig: need at least one agent");
    if (resource_types < 1) throw std::invalid_argument("EnvConfig: need at least one type");
    if (num_sites < 0) throw std::invalid_argument("EnvConfig: num_sites must be non-negative");
    if (num_sites > cells()) throw std::invalid_argument("EnvConfig: more sites than cells");
    if (num_agents + num_sites > cells())
      throw std::invalid_argument("EnvConfig: agents and sites do not fit on distinct cells");
    if (step_cap < 1) throw std::invalid_argument("EnvConfig: step_cap must be positive");
    if (!(rho_max > 0.0)) throw std::invalid_argument("EnvConfig: rho_max must be positive");
    if (sampler == RewardSampler::kReversedRanking && resource_types != 2)
      throw std::invalid_argument("EnvConfig: reversed_ranking requires exactly two types");
    if (sampler == RewardSampler::kFixed) {
      if (fixed_rho.size() != static_cast<std::size_t>(resource_types) * num_agents)
        throw std::invalid_argument("EnvConfig: fixed_rho must have T*K entries");
      for (double v : fixed_rho) {
        if (!(v > 0.0 && v <= rho_max))
          throw std::invalid_argument("EnvConfig: fixed_rho entries must lie in (0, rho_max]");
      }
    }
  }
};

/// Descending value ladder for ranked reward tables: 10, 7, 4, 2, 1, then
/// halving. Entries are distinct so every ranking is strict.
inline std::vector<double> reward_ladder(int k) {
  static const double head[] = {10.0, 7.0, 4.0, 2.0, 1.0};
  std::vector<double> ladder(k);
  double tail = 1.0;
  for (int i = 0; i < k; ++i) {
    if (i < 5) {
      ladder[i] = head[i];
    } else {
      tail *= 0.5;
      ladder[i] = tail;
    }
  }
  return ladder;
}

/// The held-out test family: lemon rewards descend with agent index, apple
/// rewards ascend. Requires T = 2.
inline RewardTable reversed_ranking_table(int num_agents) {
  const std::vector<double> ladder = reward_ladder(num_agents);
  RewardTable t = RewardTable::zeros(2, num_agents);
  for (int i = 0; i < num_agents; ++i) {
    t.at(0, i) = ladder[i];
    t.at(1, i) = ladder[num_agents - 1 - i];
  }
  return t;
}

inline RewardTable sample_reward_table(Rng& rng, int num_agents, int num_types,
                                       RewardSampler sampler,
                                       const std::vector<double>* fixed = nullptr) {
  if (num_agents < 1 || num_types < 1)
    throw std::invalid_argument("sample_reward_table: K and T must be at least 1");
  switch (sampler) {
    case RewardSampler::kFixed: {
      if (!fixed || fixed->size() != static_cast<std::size_t>(num_types) * num_agents)
        throw std::invalid_argument("sample_reward_table: fixed table missing or mis-sized");
      RewardTable t = RewardTable::zeros(num_types, num_agents);
      t.rho = *fixed;
      return t;
    }
    case RewardSampler::kReversedRanking: {
      if (num_types != 2)
        throw std::invalid_argument("sample_reward_table: reversed_ranking requires T = 2");
      return reversed_ranking_table(num_agents);
    }
    case RewardSampler::kRankedRandom: {
      const std::vector<double> ladder = reward_ladder(num_agents);
      // With one agent every table coincides with the reversed family, so the
      // exclusion only applies when an alternative exists.
      const bool exclude = num_types == 2 && num_agents > 1;
      while (true) {
        RewardTable t = RewardTable::zeros(num_types, num_agents);
        for (int type = 0; type < num_types; ++type) {
          std::vector<double> row = ladder;
          rng.shuffle(row);
          for (int i = 0; i < num_agents; ++i) t.at(type, i) = row[i];
        }
        if (exclude && t == reversed_ranking_table(num_agents)) continue;
        return t;
      }
    }
  }
  throw std::invalid_argument("sample_reward_table: unknown sampler");
}

struct SiteState {
  int cell = 0;
  int type = 0;
  bool alive = true;
};

struct EnvState {
  std::vector<int> agent_positions;  // cell indices
  std::vector<SiteState> sites;      // fixed slots; collected sites stay with alive = false
  RewardTable rho;
  int steps_elapsed = 0;
  bool done = false;

  int live_site_count() const {
    int n = 0;
    for (const SiteState& s : sites) n += s.alive ? 1 : 0;
    return n;
  }
};

/// Places agents and sites uniformly at random on distinct cells and draws a
/// fresh reward table. The episode is immediately done when there is nothing
/// to collect.
inline EnvState reset(const EnvConfig& config, Rng& rng) {
  config.validate();
  const int wanted = config.num_agents + config.num_sites;
  std::vector<int> cells(config.cells());
  for (int c = 0; c < config.cells(); ++c) cells[c] = c;
  // Partial Fisher-Yates: the first `wanted` entries are a uniform sample of
  // distinct cells.
  for (int i = 0; i < wanted; ++i) {
    const int j = i + rng.uniform_int(config.cells() - i);
    std::swap(cells[i], cells[j]);
  }
  EnvState state;
  state.agent_positions.assign(cells.begin(), cells.begin() + config.num_agents);
  state.sites.resize(config.num_sites);
  for (int m = 0; m < config.num_sites; ++m) {
    state.sites[m].cell = cells[config.num_agents + m];
    state.sites[m].type = rng.uniform_int(config.resource_types);
    state.sites[m].alive = true;
  }
  state.rho = sample_reward_table(rng, config.num_agents, config.resource_types, config.sampler,
                                  config.sampler == RewardSampler::kFixed ? &config.fixed_rho
                                                                          : nullptr);
  state.steps_elapsed = 0;
  state.done = config.num_sites == 0;
  return state;
}

struct StepResult {
  EnvState state;
  double team_reward = 0.0;
  bool done = false;
};

/// All agents move simultaneously (border-clamped); an agent standing on a
/// live site collects it, lowest index first when several land together.
inline StepResult step(const EnvConfig& config, const EnvState& state,
                       const std::vector<int>& joint_action) {
  if (state.done) throw std::logic_error("step: episode is already done");
  if (static_cast<int>(joint_action.size()) != config.num_agents)
    throw std::invalid_argument("step: need one action per agent");

  StepResult result;
  result.state = state;
  for (int i = 0; i < config.num_agents; ++i) {
    result.state.agent_positions[i] =
        grid_move(state.agent_positions[i], joint_action[i], config.width, config.height);
  }
  for (SiteState& site : result.state.sites) {
    if (!site.alive) continue;
    for (int i = 0; i < config.num_agents; ++i) {
      if (result.state.agent_positions[i] == site.cell) {
        result.team_reward += result.state.rho.at(site.type, i);
        site.alive = false;
        break;  // lowest index collects; one collection per site
      }
    }
  }
  result.state.steps_elapsed = state.steps_elapsed + 1;
  result.state.done = result.state.live_site_count() == 0 ||
                      result.state.steps_elapsed >= config.step_cap;
  result.done = result.state.done;
  return result;
}

/// o_alone: own position plus one slot per site (fixed slot order); tokens:
/// one vector per other agent in ascending index order.
struct ObservationPair {
  std::vector<double> o_alone;
  std::vector<std::vector<double>> tokens;
};

inline int obs_alone_dim(const EnvConfig& c) { return 2 + c.num_sites * (3 + c.resource_types); }
inline int token_dim(const EnvConfig& c) { return 3 + c.resource_types; }

inline ObservationPair observe(const EnvConfig& config, const EnvState& state, int agent) {
  if (agent < 0 || agent >= config.num_agents)
    throw std::invalid_argument("observe: agent index out of range");
  const double nx = std::max(config.width - 1, 1);
  const double ny = std::max(config.height - 1, 1);
  const int x = state.agent_positions[agent] % config.width;
  const int y = state.agent_positions[agent] / config.width;

  ObservationPair obs;
  obs.o_alone.reserve(obs_alone_dim(config));
  obs.o_alone.push_back(x / nx);
  obs.o_alone.push_back(y / ny);
  for (const SiteState& site : state.sites) {
    if (site.alive) {
      const int sx = site.cell % config.width;
      const int sy = site.cell / config.width;
      obs.o_alone.push_back(1.0);
      obs.o_alone.push_back((sx - x) / nx);
      obs.o_alone.push_back((sy - y) / ny);
      for (int t = 0; t < config.resource_types; ++t) {
        obs.o_alone.push_back(t == site.type ? state.rho.at(t, agent) / config.rho_max : 0.0);
      }
    } else {
      // Collected sites keep their slot with the present flag down.
      for (int k = 0; k < 3 + config.resource_types; ++k) obs.o_alone.push_back(0.0);
    }
  }

  for (int j = 0; j < config.num_agents; ++j) {
    if (j == agent) continue;
    std::vector<double> token;
    token.reserve(token_dim(config));
    const int ox = state.agent_positions[j] % config.width;
    const int oy = state.agent_positions[j] / config.width;
    token.push_back((ox - x) / nx);
    token.push_back((oy - y) / ny);
    token.push_back(1.0);  // presence flag
    for (int t = 0; t < config.resource_types; ++t) {
      token.push_back(state.rho.at(t, j) / config.rho_max);
    }
    obs.tokens.push_back(std::move(token));
  }
  return obs;
}

}  // namespace collaq
