#pragma once

// Experiment configuration: JSON schema with defaults, strict validation
// (unknown keys rejected, errors carry JSON-pointer paths) and round-trip
// serialization. Also the JSON forms of the reports the CLI prints.

#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "collaq/adhoc.hpp"
#include "collaq/assignment.hpp"
#include "collaq/collaq.hpp"
#include "collaq/gridworld.hpp"
#include "collaq/nnet.hpp"

namespace collaq {

using json = nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& path, const std::string& message)
      : std::runtime_error("config error at " + (path.empty() ? "/" : path) + ": " + message) {}
};

namespace cfgdetail {

inline void check_keys(const json& j, const std::set<std::string>& allowed,
                       const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  for (const auto& item : j.items()) {
    if (!allowed.count(item.key())) throw ConfigError(path + "/" + item.key(), "unknown key");
  }
}

template <typename T>
inline T get_or(const json& j, const std::string& key, T fallback, const std::string& path) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(path + "/" + key, "wrong type");
  }
}

inline void require(bool condition, const std::string& path, const std::string& message) {
  if (!condition) throw ConfigError(path, message);
}

}  // namespace cfgdetail

inline RewardSampler parse_sampler(const std::string& name, const std::string& path) {
  if (name == "ranked_random") return RewardSampler::kRankedRandom;
  if (name == "fixed") return RewardSampler::kFixed;
  if (name == "reversed_ranking") return RewardSampler::kReversedRanking;
  throw ConfigError(path, "unknown sampler '" + name + "'");
}

inline Variant parse_variant(const std::string& name, const std::string& path) {
  if (name == "hard") return Variant::kHard;
  if (name == "soft") return Variant::kSoft;
  if (name == "soft_target") return Variant::kSoftTarget;
  throw ConfigError(path, "unknown variant '" + name + "'");
}

inline Algo parse_algo(const std::string& name, const std::string& path) {
  if (name == "collaq") return Algo::kCollaQ;
  if (name == "iql") return Algo::kIql;
  if (name == "sum_two_nets") return Algo::kSumTwoNets;
  throw ConfigError(path, "unknown algo '" + name + "'");
}

inline Mixer parse_mixer(const std::string& name, const std::string& path) {
  if (name == "none") return Mixer::kNone;
  if (name == "additive") return Mixer::kAdditive;
  throw ConfigError(path, "unknown mixer '" + name + "'");
}

inline MaraActions parse_mara_actions(const std::string& name, const std::string& path) {
  if (name == "sampled") return MaraActions::kSampled;
  if (name == "all") return MaraActions::kAll;
  throw ConfigError(path, "unknown mara_actions '" + name + "'");
}

inline EnvConfig parse_env_config(const json& j, const std::string& path = "/env") {
  using namespace cfgdetail;
  check_keys(j, {"width", "height", "num_agents", "resource_types", "num_sites", "step_cap",
                 "sampler", "rho_max", "fixed_rho"},
             path);
  EnvConfig env;
  env.width = get_or(j, "width", env.width, path);
  env.height = get_or(j, "height", env.height, path);
  env.num_agents = get_or(j, "num_agents", env.num_agents, path);
  env.resource_types = get_or(j, "resource_types", env.resource_types, path);
  env.num_sites = get_or(j, "num_sites", env.num_sites, path);
  env.step_cap = get_or(j, "step_cap", env.step_cap, path);
  env.sampler = parse_sampler(get_or<std::string>(j, "sampler", "ranked_random", path),
                              path + "/sampler");
  env.rho_max = get_or(j, "rho_max", env.rho_max, path);
  env.fixed_rho = get_or(j, "fixed_rho", env.fixed_rho, path);
  require(env.width > 0, path + "/width", "must be positive");
  require(env.height > 0, path + "/height", "must be positive");
  require(env.num_agents >= 1, path + "/num_agents", "must be at least 1");
  require(env.resource_types >= 1, path + "/resource_types", "must be at least 1");
  require(env.num_sites >= 0, path + "/num_sites", "must be non-negative");
  require(env.step_cap >= 1, path + "/step_cap", "must be positive");
  require(env.rho_max > 0.0, path + "/rho_max", "must be positive");
  require(!(env.sampler == RewardSampler::kReversedRanking && env.resource_types != 2),
          path + "/sampler", "reversed_ranking requires resource_types = 2");
  try {
    env.validate();
  } catch (const std::exception& e) {
    throw ConfigError(path, e.what());
  }
  return env;
}

inline TrainConfig parse_train_config(const json& j, const std::string& path = "/train") {
  using namespace cfgdetail;
  check_keys(j, {"gamma", "lr", "alpha", "batch_size", "target_update_period", "epsilon",
                 "total_steps", "buffer_capacity", "learn_start", "variant", "algo", "mixer",
                 "mara_actions", "rmsprop_decay", "rmsprop_eps", "metrics_cadence",
                 "eval_episodes_per_row"},
             path);
  TrainConfig cfg;
  cfg.gamma = get_or(j, "gamma", cfg.gamma, path);
  cfg.lr = get_or(j, "lr", cfg.lr, path);
  cfg.alpha = get_or(j, "alpha", cfg.alpha, path);
  cfg.batch_size = get_or(j, "batch_size", cfg.batch_size, path);
  cfg.target_update_period = get_or(j, "target_update_period", cfg.target_update_period, path);
  if (j.contains("epsilon")) {
    const json& e = j.at("epsilon");
    check_keys(e, {"start", "end", "anneal_steps"}, path + "/epsilon");
    cfg.epsilon.start = get_or(e, "start", cfg.epsilon.start, path + "/epsilon");
    cfg.epsilon.end = get_or(e, "end", cfg.epsilon.end, path + "/epsilon");
    cfg.epsilon.anneal_steps = get_or(e, "anneal_steps", cfg.epsilon.anneal_steps,
                                      path + "/epsilon");
  }
  cfg.total_steps = get_or(j, "total_steps", cfg.total_steps, path);
  cfg.buffer_capacity = get_or(j, "buffer_capacity", cfg.buffer_capacity, path);
  cfg.learn_start = get_or(j, "learn_start", cfg.learn_start, path);
  cfg.variant = parse_variant(get_or<std::string>(j, "variant", "soft_target", path),
                              path + "/variant");
  cfg.algo = parse_algo(get_or<std::string>(j, "algo", "collaq", path), path + "/algo");
  cfg.mixer = parse_mixer(get_or<std::string>(j, "mixer", "none", path), path + "/mixer");
  cfg.mara_actions = parse_mara_actions(get_or<std::string>(j, "mara_actions", "sampled", path),
                                        path + "/mara_actions");
  cfg.rmsprop_decay = get_or(j, "rmsprop_decay", cfg.rmsprop_decay, path);
  cfg.rmsprop_eps = get_or(j, "rmsprop_eps", cfg.rmsprop_eps, path);
  cfg.metrics_cadence = get_or(j, "metrics_cadence", cfg.metrics_cadence, path);
  cfg.eval_episodes_per_row = get_or(j, "eval_episodes_per_row", cfg.eval_episodes_per_row, path);
  require(cfg.gamma > 0.0 && cfg.gamma < 1.0, path + "/gamma", "must lie in (0, 1)");
  require(cfg.lr > 0.0, path + "/lr", "must be positive");
  require(cfg.alpha >= 0.0, path + "/alpha", "must be non-negative");
  require(cfg.batch_size >= 1, path + "/batch_size", "must be positive");
  require(cfg.epsilon.start >= cfg.epsilon.end && cfg.epsilon.end >= 0.0,
          path + "/epsilon", "need start >= end >= 0");
  try {
    cfg.validate();
  } catch (const std::exception& e) {
    throw ConfigError(path, e.what());
  }
  return cfg;
}

/// Architecture knobs; input widths are derived from the environment and may
/// be stated explicitly only to assert the intended layout.
struct NetConfig {
  std::vector<int> alone_hidden = {64, 64};
  std::vector<int> head_hidden = {64};
  int embed_dim = 32;
  int attn_layers = 2;
  int attn_heads = 2;
  bool double_precision = false;
  std::optional<int> alone_input_dim;
  std::optional<int> token_input_dim;
};

inline NetConfig parse_net_config(const json& j, const std::string& path = "/net") {
  using namespace cfgdetail;
  check_keys(j, {"alone_hidden", "head_hidden", "embed_dim", "attn_layers", "attn_heads",
                 "precision", "alone_input_dim", "token_input_dim"},
             path);
  NetConfig net;
  net.alone_hidden = get_or(j, "alone_hidden", net.alone_hidden, path);
  net.head_hidden = get_or(j, "head_hidden", net.head_hidden, path);
  net.embed_dim = get_or(j, "embed_dim", net.embed_dim, path);
  net.attn_layers = get_or(j, "attn_layers", net.attn_layers, path);
  net.attn_heads = get_or(j, "attn_heads", net.attn_heads, path);
  const std::string precision = get_or<std::string>(j, "precision", "f32", path);
  if (precision == "f32") {
    net.double_precision = false;
  } else if (precision == "f64") {
    net.double_precision = true;
  } else {
    throw ConfigError(path + "/precision", "must be f32 or f64");
  }
  if (j.contains("alone_input_dim")) net.alone_input_dim = get_or(j, "alone_input_dim", 0, path);
  if (j.contains("token_input_dim")) net.token_input_dim = get_or(j, "token_input_dim", 0, path);
  require(net.embed_dim > 0, path + "/embed_dim", "must be positive");
  require(net.attn_layers > 0, path + "/attn_layers", "must be positive");
  require(net.attn_heads > 0, path + "/attn_heads", "must be positive");
  require(net.embed_dim % net.attn_heads == 0, path + "/attn_heads", "must divide embed_dim");
  return net;
}

/// Builds the full layer-size spec for one agent from the environment's
/// observation layout.
inline NetworkSpec make_network_spec(const EnvConfig& env, const NetConfig& net) {
  const int alone_dim = obs_alone_dim(env);
  const int tok_dim = token_dim(env);
  if (net.alone_input_dim && *net.alone_input_dim != alone_dim)
    throw ConfigError("/net/alone_input_dim",
                      "does not match the observation layout derived from /env (expected " +
                          std::to_string(alone_dim) + ")");
  if (net.token_input_dim && *net.token_input_dim != tok_dim)
    throw ConfigError("/net/token_input_dim",
                      "does not match the observation layout derived from /env (expected " +
                          std::to_string(tok_dim) + ")");
  NetworkSpec spec;
  spec.alone_tower.push_back(alone_dim);
  for (int h : net.alone_hidden) spec.alone_tower.push_back(h);
  spec.alone_tower.push_back(kGridActionCount);
  spec.collab_encoder = {alone_dim, net.embed_dim};
  spec.token_encoder = {tok_dim, net.embed_dim};
  spec.attention = {net.attn_layers, net.embed_dim, net.attn_heads};
  spec.collab_head.push_back(2 * net.embed_dim);
  for (int h : net.head_hidden) spec.collab_head.push_back(h);
  spec.collab_head.push_back(kGridActionCount);
  spec.double_precision = net.double_precision;
  try {
    spec.validate();
  } catch (const std::exception& e) {
    throw ConfigError("/net", e.what());
  }
  return spec;
}

struct EvalConfig {
  int episodes = 200;
  std::vector<std::string> scenarios = {"standard"};
};

inline EvalConfig parse_eval_config(const json& j, const std::string& path = "/eval") {
  using namespace cfgdetail;
  check_keys(j, {"episodes", "scenarios"}, path);
  EvalConfig eval;
  eval.episodes = get_or(j, "episodes", eval.episodes, path);
  eval.scenarios = get_or(j, "scenarios", eval.scenarios, path);
  require(eval.episodes >= 1, path + "/episodes", "must be positive");
  return eval;
}

/// Optional oracle instance: a joint assignment problem on a shared grid.
struct OracleConfig {
  int width = 4;
  int height = 4;
  double discount = 0.992;
  int horizon = 8;
  std::vector<int> agent_states;
  std::vector<RewardSite> sites;
  std::vector<double> weights;  // M*K row-major; empty = all ones
  std::vector<int> local_agents = {0};
  int vicinity = 2;  // C

  AssignmentInstance instance() const {
    AssignmentInstance inst;
    const TabularMdp mdp = build_grid_mdp(width, height, discount, horizon);
    for (std::size_t i = 0; i < agent_states.size(); ++i) inst.mdps.push_back(mdp);
    inst.states = agent_states;
    inst.sites.sites = sites;
    const int m = inst.sites.count();
    const int k = static_cast<int>(agent_states.size());
    if (weights.empty()) {
      inst.weights = WeightMatrix::ones(m, k);
    } else {
      inst.weights.num_sites = m;
      inst.weights.num_agents = k;
      inst.weights.w = weights;
    }
    inst.validate();
    return inst;
  }
};

inline OracleConfig parse_oracle_config(const json& j, const std::string& path = "/oracle") {
  using namespace cfgdetail;
  check_keys(j, {"width", "height", "discount", "horizon", "agent_states", "sites", "weights",
                 "local_agents", "C"},
             path);
  OracleConfig oc;
  oc.width = get_or(j, "width", oc.width, path);
  oc.height = get_or(j, "height", oc.height, path);
  oc.discount = get_or(j, "discount", oc.discount, path);
  oc.horizon = get_or(j, "horizon", oc.horizon, path);
  oc.agent_states = get_or(j, "agent_states", oc.agent_states, path);
  require(!oc.agent_states.empty(), path + "/agent_states", "need at least one agent");
  if (!j.contains("sites") || !j.at("sites").is_array() || j.at("sites").empty())
    throw ConfigError(path + "/sites", "need a non-empty site array");
  int idx = 0;
  for (const json& sj : j.at("sites")) {
    const std::string spath = path + "/sites/" + std::to_string(idx++);
    check_keys(sj, {"state", "action", "budget"}, spath);
    RewardSite site;
    site.state = get_or(sj, "state", 0, spath);
    site.action = get_or(sj, "action", 0, spath);
    site.budget = get_or(sj, "budget", 0.0, spath);
    require(site.budget > 0.0, spath + "/budget", "must be positive");
    oc.sites.push_back(site);
  }
  oc.weights = get_or(j, "weights", oc.weights, path);
  oc.local_agents = get_or(j, "local_agents", oc.local_agents, path);
  oc.vicinity = get_or(j, "C", oc.vicinity, path);
  require(oc.vicinity >= 0, path + "/C", "must be non-negative");
  try {
    oc.instance();
  } catch (const std::exception& e) {
    throw ConfigError(path, e.what());
  }
  return oc;
}

struct ExperimentConfig {
  EnvConfig env;
  TrainConfig train;
  NetConfig net;
  EvalConfig eval;
  std::uint64_t seed = 0;
  std::string out_dir = "runs/default";
  std::optional<OracleConfig> oracle;

  NetworkSpec network_spec() const { return make_network_spec(env, net); }
};

inline ExperimentConfig parse_experiment_config(const json& j) {
  using namespace cfgdetail;
  check_keys(j, {"env", "train", "net", "eval", "seed", "out_dir", "oracle"}, "");
  ExperimentConfig cfg;
  cfg.env = parse_env_config(j.contains("env") ? j.at("env") : json::object());
  cfg.train = parse_train_config(j.contains("train") ? j.at("train") : json::object());
  cfg.net = parse_net_config(j.contains("net") ? j.at("net") : json::object());
  cfg.eval = parse_eval_config(j.contains("eval") ? j.at("eval") : json::object());
  cfg.seed = get_or<std::uint64_t>(j, "seed", 0, "");
  cfg.out_dir = get_or<std::string>(j, "out_dir", cfg.out_dir, "");
  if (j.contains("oracle")) cfg.oracle = parse_oracle_config(j.at("oracle"));
  make_network_spec(cfg.env, cfg.net);  // cross-field dimension validation
  for (const std::string& scenario : cfg.eval.scenarios) {
    if (scenario == "standard" || scenario == "adhoc_reversed") continue;
    if (scenario.rfind("team_size:", 0) == 0) continue;
    throw ConfigError("/eval/scenarios", "unknown scenario '" + scenario + "'");
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_config: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("load_config: parse failure in " + path + ": " + e.what());
  }
  return parse_experiment_config(j);
}

inline json env_to_json(const EnvConfig& env) {
  json j{{"width", env.width},
         {"height", env.height},
         {"num_agents", env.num_agents},
         {"resource_types", env.resource_types},
         {"num_sites", env.num_sites},
         {"step_cap", env.step_cap},
         {"sampler", to_string(env.sampler)},
         {"rho_max", env.rho_max}};
  if (!env.fixed_rho.empty()) j["fixed_rho"] = env.fixed_rho;
  return j;
}

inline json train_to_json(const TrainConfig& cfg) {
  return json{{"gamma", cfg.gamma},
              {"lr", cfg.lr},
              {"alpha", cfg.alpha},
              {"batch_size", cfg.batch_size},
              {"target_update_period", cfg.target_update_period},
              {"epsilon", json{{"start", cfg.epsilon.start},
                               {"end", cfg.epsilon.end},
                               {"anneal_steps", cfg.epsilon.anneal_steps}}},
              {"total_steps", cfg.total_steps},
              {"buffer_capacity", cfg.buffer_capacity},
              {"learn_start", cfg.learn_start},
              {"variant", to_string(cfg.variant)},
              {"algo", to_string(cfg.algo)},
              {"mixer", to_string(cfg.mixer)},
              {"mara_actions", to_string(cfg.mara_actions)},
              {"rmsprop_decay", cfg.rmsprop_decay},
              {"rmsprop_eps", cfg.rmsprop_eps},
              {"metrics_cadence", cfg.metrics_cadence},
              {"eval_episodes_per_row", cfg.eval_episodes_per_row}};
}

inline json net_to_json(const NetConfig& net) {
  json j{{"alone_hidden", net.alone_hidden},
         {"head_hidden", net.head_hidden},
         {"embed_dim", net.embed_dim},
         {"attn_layers", net.attn_layers},
         {"attn_heads", net.attn_heads},
         {"precision", net.double_precision ? "f64" : "f32"}};
  if (net.alone_input_dim) j["alone_input_dim"] = *net.alone_input_dim;
  if (net.token_input_dim) j["token_input_dim"] = *net.token_input_dim;
  return j;
}

inline json oracle_to_json(const OracleConfig& oc) {
  json sites = json::array();
  for (const RewardSite& s : oc.sites) {
    sites.push_back(json{{"state", s.state}, {"action", s.action}, {"budget", s.budget}});
  }
  json j{{"width", oc.width},       {"height", oc.height},
         {"discount", oc.discount}, {"horizon", oc.horizon},
         {"agent_states", oc.agent_states}, {"sites", sites},
         {"local_agents", oc.local_agents}, {"C", oc.vicinity}};
  if (!oc.weights.empty()) j["weights"] = oc.weights;
  return j;
}

inline json experiment_to_json(const ExperimentConfig& cfg) {
  json j{{"env", env_to_json(cfg.env)},
         {"train", train_to_json(cfg.train)},
         {"net", net_to_json(cfg.net)},
         {"eval", json{{"episodes", cfg.eval.episodes}, {"scenarios", cfg.eval.scenarios}}},
         {"seed", cfg.seed},
         {"out_dir", cfg.out_dir}};
  if (cfg.oracle) j["oracle"] = oracle_to_json(*cfg.oracle);
  return j;
}

/// The canonical bytes hashed into checkpoints: environment, training and
/// architecture sections only, so evaluation settings do not invalidate a
/// trained model.
inline std::string checkpoint_hash_source(const ExperimentConfig& cfg) {
  json j{{"env", env_to_json(cfg.env)},
         {"train", train_to_json(cfg.train)},
         {"net", net_to_json(cfg.net)}};
  return j.dump();
}

inline json gap_report_to_json(const GapReport& report) {
  json j{{"j_star", report.j_star},
         {"j_hat", report.j_hat},
         {"bound", report.bound},
         {"holds", report.holds},
         {"C", report.vicinity},
         {"R_max", report.r_max},
         {"M", report.num_sites},
         {"K", report.num_agents}};
  if (report.remote_distance) {
    j["D"] = *report.remote_distance;
  } else {
    j["D"] = nullptr;  // no remote agents: D is infinite and gamma^D = 0
  }
  return j;
}

inline json eval_report_to_json(const EvalReport& report) {
  return json{{"scenario", report.scenario},
              {"episodes", report.episodes},
              {"mean_return", report.mean_return},
              {"std_err", report.std_err},
              {"per_episode", report.per_episode},
              {"seed", report.seed}};
}

inline json reward_table_to_json(const RewardTable& rho) {
  json rows = json::array();
  for (int t = 0; t < rho.num_types; ++t) {
    json row = json::array();
    for (int k = 0; k < rho.num_agents; ++k) row.push_back(rho.at(t, k));
    rows.push_back(row);
  }
  return rows;
}

inline json env_state_to_json(const EnvState& state) {
  json sites = json::array();
  for (const SiteState& s : state.sites) {
    sites.push_back(json{{"cell", s.cell}, {"type", s.type}, {"alive", s.alive}});
  }
  return json{{"agent_positions", state.agent_positions},
              {"sites", sites},
              {"rho", reward_table_to_json(state.rho)},
              {"steps_elapsed", state.steps_elapsed},
              {"done", state.done}};
}

inline EnvState env_state_from_json(const json& j, const EnvConfig& env,
                                    const std::string& path = "/scene") {
  using namespace cfgdetail;
  check_keys(j, {"agent_positions", "sites", "rho", "steps_elapsed", "done"}, path);
  EnvState state;
  state.agent_positions = get_or(j, "agent_positions", std::vector<int>{}, path);
  require(static_cast<int>(state.agent_positions.size()) == env.num_agents,
          path + "/agent_positions", "need one cell per agent");
  for (int cell : state.agent_positions) {
    require(cell >= 0 && cell < env.cells(), path + "/agent_positions", "cell out of range");
  }
  if (!j.contains("sites") || !j.at("sites").is_array())
    throw ConfigError(path + "/sites", "need a site array");
  int idx = 0;
  for (const json& sj : j.at("sites")) {
    const std::string spath = path + "/sites/" + std::to_string(idx++);
    check_keys(sj, {"cell", "type", "alive"}, spath);
    SiteState site;
    site.cell = get_or(sj, "cell", 0, spath);
    site.type = get_or(sj, "type", 0, spath);
    site.alive = get_or(sj, "alive", true, spath);
    require(site.cell >= 0 && site.cell < env.cells(), spath + "/cell", "out of range");
    require(site.type >= 0 && site.type < env.resource_types, spath + "/type", "out of range");
    state.sites.push_back(site);
  }
  state.rho = RewardTable::zeros(env.resource_types, env.num_agents);
  const json& rows = j.contains("rho") ? j.at("rho") : json::array();
  require(rows.is_array() && static_cast<int>(rows.size()) == env.resource_types, path + "/rho",
          "need one row per resource type");
  for (int t = 0; t < env.resource_types; ++t) {
    const json& row = rows.at(t);
    require(row.is_array() && static_cast<int>(row.size()) == env.num_agents,
            path + "/rho", "need one entry per agent");
    for (int k = 0; k < env.num_agents; ++k) state.rho.at(t, k) = row.at(k).get<double>();
  }
  state.steps_elapsed = get_or(j, "steps_elapsed", 0, path);
  state.done = get_or(j, "done", false, path);
  return state;
}

inline json policy_map_to_json(const PolicyMap& map) {
  return json{{"width", map.width},
              {"height", map.height},
              {"agent", map.agent},
              {"q_alone_actions", map.q_alone_actions},
              {"q_actions", map.q_actions},
              {"scene", env_state_to_json(map.scene)}};
}

}  // namespace collaq
