#pragma once

// Command-line front end. Exit codes: 0 success, 1 usage, 2 runtime failure,
// 3 property-check failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "collaq/adhoc.hpp"
#include "collaq/checkpoint.hpp"
#include "collaq/config.hpp"
#include "collaq/gradcheck.hpp"
#include "collaq/instances.hpp"
#include "collaq/metrics.hpp"
#include "collaq/train.hpp"

namespace collaq {

namespace clidetail {

inline std::string resolve_out_dir(const std::string& flag_value, const std::string& config_value) {
  if (const char* env = std::getenv("COLLAQ_OUT_DIR")) return env;
  return flag_value.empty() ? config_value : flag_value;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path);
}

/// A checkpoint must carry exactly the tensors the architecture defines.
template <typename S>
inline void check_store_shapes(const ParamStore<S>& expected, const ParamStore<S>& loaded,
                               int agent) {
  if (expected.tensors().size() != loaded.tensors().size())
    throw CheckpointError("checkpoint tensor count mismatch for agent " + std::to_string(agent));
  for (std::size_t t = 0; t < expected.tensors().size(); ++t) {
    const auto& want = expected.tensors()[t];
    const auto& have = loaded.tensors()[t];
    if (want.name != have.name || want.value.rows() != have.value.rows() ||
        want.value.cols() != have.value.cols())
      throw CheckpointError("checkpoint tensor mismatch: expected " + want.name + ", found " +
                            have.name + " for agent " + std::to_string(agent));
  }
}

template <typename S>
inline Learner<S> learner_from_checkpoint(const ExperimentConfig& cfg, const std::string& path,
                                          bool force) {
  const ConfigHash hash = sha256_bytes(checkpoint_hash_source(cfg));
  LoadedCheckpoint loaded = read_checkpoint(path, &hash, force);
  if (static_cast<int>(loaded.agents.size()) != cfg.env.num_agents)
    throw CheckpointError("checkpoint holds " + std::to_string(loaded.agents.size()) +
                          " agents but the config expects " +
                          std::to_string(cfg.env.num_agents));
  Learner<S> learner(cfg.env, cfg.train, cfg.network_spec(), cfg.seed);
  std::vector<ParamStore<S>> stores;
  for (int i = 0; i < cfg.env.num_agents; ++i) {
    check_store_shapes(learner.params(i), loaded.agents[i], i);
    stores.push_back(std::move(loaded.agents[i]));
  }
  learner.load_params(std::move(stores));
  return learner;
}

inline int run_train(const std::string& config_path, std::optional<std::uint64_t> seed,
                     const std::string& out_flag) {
  ExperimentConfig cfg = load_config(config_path);
  if (seed) cfg.seed = *seed;
  const std::string out_dir = resolve_out_dir(out_flag, cfg.out_dir);
  std::filesystem::create_directories(out_dir);

  MetricsWriter writer(out_dir + "/metrics.csv");
  const RunResult<float> result =
      run_training<float>(cfg.env, cfg.train, cfg.network_spec(), cfg.seed,
                          [&](const RunMetricsRow& row) { writer.append(row); });
  writer.flush();
  write_text(out_dir + "/config.json", experiment_to_json(cfg).dump(2) + "\n");

  const ConfigHash hash = sha256_bytes(checkpoint_hash_source(cfg));
  std::vector<ParamStore<float>> stores;
  for (int i = 0; i < cfg.env.num_agents; ++i) stores.push_back(result.learner->params(i));
  if (result.aborted) {
    write_checkpoint(stores, hash, out_dir + "/checkpoint_lastgood.clq");
    std::cerr << "training aborted at step " << result.abort_step
              << " (non-finite loss); last good parameters saved to "
              << out_dir + "/checkpoint_lastgood.clq" << "\n";
    return 2;
  }
  write_checkpoint(stores, hash, out_dir + "/checkpoint.clq");
  std::cout << "trained " << cfg.train.total_steps << " steps over "
            << result.episodes_completed << " episodes; outputs in " << out_dir << "\n";
  return 0;
}

inline int run_eval(const std::string& config_path, const std::string& checkpoint_path,
                    const std::string& scenario, std::optional<int> episodes,
                    std::optional<std::uint64_t> seed, const std::string& out_file, bool force) {
  ExperimentConfig cfg = load_config(config_path);
  Learner<float> learner = learner_from_checkpoint<float>(cfg, checkpoint_path, force);
  const int n = episodes ? *episodes : cfg.eval.episodes;
  const std::uint64_t eval_seed = seed ? *seed : derive_stream(cfg.seed, "eval-cli");

  EvalReport report;
  if (scenario == "standard") {
    report = evaluate(learner, cfg.env, n, eval_seed);
  } else if (scenario == "adhoc_reversed") {
    report = adhoc_reversed_test(learner, n, eval_seed);
  } else if (scenario.rfind("team_size:", 0) == 0) {
    const int test_k = std::stoi(scenario.substr(std::string("team_size:").size()));
    report = adhoc_team_size_test(learner, test_k, n, eval_seed);
  } else {
    throw std::runtime_error("unknown scenario '" + scenario + "'");
  }
  const std::string text = eval_report_to_json(report).dump(2) + "\n";
  std::cout << text;
  if (!out_file.empty()) write_text(out_file, text);
  return 0;
}

inline int run_oracle(const std::string& config_path) {
  const ExperimentConfig cfg = load_config(config_path);
  if (!cfg.oracle)
    throw std::runtime_error("config has no /oracle section; see configs/oracle_k1.json");
  const GapReport report =
      theorem1_gap_check(cfg.oracle->instance(), cfg.oracle->local_agents, cfg.oracle->vicinity);
  std::cout << gap_report_to_json(report).dump(2) << "\n";
  return report.holds ? 0 : 3;
}

inline int run_lemmas(int sweeps, std::uint64_t seed) {
  Rng max_rng(derive_stream(seed, "lemma-max"));
  Rng bound_rng(derive_stream(seed, "lemma-bound"));
  Rng remote_rng(derive_stream(seed, "lemma-remote"));
  const SweepOutcome max_out = lemma_max_sweep(10000, max_rng);
  const SweepOutcome bound_out = lemma_bound_sweep(sweeps, bound_rng);
  const SweepOutcome remote_out = lemma_remote_reward_sweep(sweeps, remote_rng);
  std::cout << "lemma_max: " << max_out.held << "/" << max_out.total << " hold\n";
  std::cout << "lemma_bound: " << bound_out.held << "/" << bound_out.total << " hold\n";
  std::cout << "lemma_remote_reward: " << remote_out.held << "/" << remote_out.total
            << " hold\n";
  return max_out.ok() && bound_out.ok() && remote_out.ok() ? 0 : 3;
}

inline int run_gradcheck(int specs, std::uint64_t seed) {
  const double worst = gradcheck_sweep(specs, seed);
  std::cout << "gradcheck: specs=" << specs << " max_rel_err=" << format_real(worst) << "\n";
  return worst <= 1e-6 ? 0 : 3;
}

inline int run_viz(const std::string& config_path, const std::string& checkpoint_path,
                   const std::string& scene_path, int agent, const std::string& out_file,
                   bool force) {
  const ExperimentConfig cfg = load_config(config_path);
  Learner<float> learner = learner_from_checkpoint<float>(cfg, checkpoint_path, force);
  std::ifstream in(scene_path);
  if (!in) throw std::runtime_error("cannot open scene " + scene_path);
  json j;
  in >> j;
  const EnvState scene = env_state_from_json(j, cfg.env);
  const PolicyMap map = policy_map_export(learner, scene, agent);
  const std::string text = policy_map_to_json(map).dump(2) + "\n";
  std::cout << text;
  if (!out_file.empty()) write_text(out_file, text);
  return 0;
}

}  // namespace clidetail

inline int cli_dispatch(int argc, const char* const* argv) {
  CLI::App app{"CollaQ resource-collection workbench"};
  app.require_subcommand(0, 1);

  std::string config_path, out_dir, checkpoint_path, scenario = "standard", scene_path, out_file;
  std::optional<std::uint64_t> seed_flag;
  std::optional<int> episodes_flag;
  bool force = false;
  int sweeps = 200;
  int specs = 20;
  std::uint64_t tool_seed = 0;
  int viz_agent = 0;

  auto* train = app.add_subcommand("train", "train agents and write metrics + checkpoint");
  train->add_option("--config", config_path, "experiment config JSON")->required();
  std::uint64_t train_seed = 0;
  auto* train_seed_opt = train->add_option("--seed", train_seed, "master seed override");
  train->add_option("--out", out_dir, "output directory (COLLAQ_OUT_DIR overrides)");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a scenario");
  eval->add_option("--config", config_path, "experiment config JSON")->required();
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  eval->add_option("--scenario", scenario,
                   "standard | adhoc_reversed | team_size:<K> (default standard)");
  int eval_episodes = 0;
  auto* eval_episodes_opt = eval->add_option("--episodes", eval_episodes, "episode count");
  std::uint64_t eval_seed = 0;
  auto* eval_seed_opt = eval->add_option("--seed", eval_seed, "evaluation seed");
  eval->add_option("--out", out_file, "also write the report JSON here");
  eval->add_flag("--force", force, "accept a config-hash mismatch");

  auto* oracle = app.add_subcommand("oracle", "solve the /oracle instance and print a gap report");
  oracle->add_option("--config", config_path, "experiment config JSON")->required();

  auto* lemmas = app.add_subcommand("lemmas", "run the lemma property sweeps");
  lemmas->add_option("--sweeps", sweeps, "instances per sweep (default 200)");
  lemmas->add_option("--seed", tool_seed, "sweep seed");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  gradcheck->add_option("--specs", specs, "random specs to check (default 20)");
  gradcheck->add_option("--seed", tool_seed, "sweep seed");

  auto* viz = app.add_subcommand("viz", "export Q_alone / Q policy maps for a frozen scene");
  viz->add_option("--config", config_path, "experiment config JSON")->required();
  viz->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  viz->add_option("--scene", scene_path, "frozen EnvState JSON")->required();
  viz->add_option("--agent", viz_agent, "agent index (default 0)");
  viz->add_option("--out", out_file, "also write the map JSON here");
  viz->add_flag("--force", force, "accept a config-hash mismatch");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  if (app.get_subcommands().empty()) {
    std::cout << app.help();
    return 1;
  }

  try {
    if (train->parsed()) {
      if (*train_seed_opt) seed_flag = train_seed;
      return clidetail::run_train(config_path, seed_flag, out_dir);
    }
    if (eval->parsed()) {
      if (*eval_episodes_opt) episodes_flag = eval_episodes;
      if (*eval_seed_opt) seed_flag = eval_seed;
      return clidetail::run_eval(config_path, checkpoint_path, scenario, episodes_flag,
                                 seed_flag, out_file, force);
    }
    if (oracle->parsed()) return clidetail::run_oracle(config_path);
    if (lemmas->parsed()) return clidetail::run_lemmas(sweeps, tool_seed);
    if (gradcheck->parsed()) return clidetail::run_gradcheck(specs, tool_seed);
    if (viz->parsed()) {
      return clidetail::run_viz(config_path, checkpoint_path, scene_path, viz_agent, out_file,
                                force);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  std::cout << app.help();
  return 1;
}

}  // namespace collaq
