#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "collaq/checkpoint.hpp"
#include "collaq/cli.hpp"
#include "collaq/config.hpp"
#include "collaq/metrics.hpp"

using namespace collaq;

namespace {

std::filesystem::path test_dir() {
  const auto dir = std::filesystem::temp_directory_path() / "collaq_expcli_test";
  std::filesystem::create_directories(dir);
  return dir;
}

std::string write_file(const std::string& name, const std::string& text) {
  const auto path = test_dir() / name;
  std::ofstream out(path, std::ios::trunc);
  out << text;
  return path.string();
}

int dispatch(std::vector<std::string> args) {
  std::vector<const char*> argv{"collaq"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_dispatch(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST(Config, EmptyObjectYieldsTheDocumentedDefaults) {
  const ExperimentConfig cfg = parse_experiment_config(json::object());
  EXPECT_DOUBLE_EQ(cfg.train.gamma, 0.992);
  EXPECT_DOUBLE_EQ(cfg.train.lr, 4e-5);
  EXPECT_DOUBLE_EQ(cfg.train.alpha, 1.0);
  EXPECT_EQ(cfg.train.batch_size, 128);
  EXPECT_EQ(cfg.train.target_update_period, 10000);
  EXPECT_DOUBLE_EQ(cfg.train.epsilon.start, 1.0);
  EXPECT_DOUBLE_EQ(cfg.train.epsilon.end, 0.01);
  EXPECT_EQ(cfg.train.epsilon.anneal_steps, 100000);
  EXPECT_EQ(cfg.train.total_steps, 150000);
  EXPECT_EQ(cfg.env.width, 7);
  EXPECT_EQ(cfg.env.num_agents, 3);
  EXPECT_EQ(cfg.train.variant, Variant::kSoftTarget);
  EXPECT_EQ(cfg.train.algo, Algo::kCollaQ);
}

TEST(Config, RangeErrorNamesTheFieldPath) {
  try {
    parse_experiment_config(json{{"train", {{"gamma", 1.5}}}});
    FAIL() << "expected a validation error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("/train/gamma"), std::string::npos);
  }
}

TEST(Config, UnknownKeysAreRejectedWithPaths) {
  try {
    parse_experiment_config(json{{"train", {{"gamm", 0.9}}}});
    FAIL() << "expected an unknown-key error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("/train/gamm"), std::string::npos);
  }
  EXPECT_THROW(parse_experiment_config(json{{"bogus", 1}}), ConfigError);
}

TEST(Config, RoundTripIsStructurallyIdentical) {
  json j{{"env", {{"width", 5}, {"height", 5}, {"num_agents", 2}, {"num_sites", 3}}},
        {"train", {{"alpha", 0.5}, {"algo", "iql"}, {"total_steps", 2000}}},
        {"net", {{"embed_dim", 16}, {"attn_heads", 2}}},
        {"seed", 9},
        {"out_dir", "runs/x"}};
  const ExperimentConfig cfg = parse_experiment_config(j);
  const json dumped = experiment_to_json(cfg);
  const ExperimentConfig reparsed = parse_experiment_config(dumped);
  EXPECT_EQ(dumped, experiment_to_json(reparsed));
}

TEST(Config, CrossFieldDimensionChecks) {
  // Explicit input dims must match the layout derived from the environment.
  try {
    parse_experiment_config(json{{"net", {{"alone_input_dim", 10}}}});
    FAIL() << "expected a dimension mismatch";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("/net/alone_input_dim"), std::string::npos);
  }
  // Correct value passes: 2 + 4 * (3 + 2) = 22 for the default environment.
  const ExperimentConfig ok =
      parse_experiment_config(json{{"net", {{"alone_input_dim", 22}}}});
  EXPECT_EQ(ok.network_spec().alone_tower.front(), 22);
  EXPECT_THROW(
      parse_experiment_config(json{{"env", {{"sampler", "reversed_ranking"},
                                            {"resource_types", 3}}}}),
      ConfigError);
}

TEST(Config, SamplerAndEnumParsing) {
  EXPECT_THROW(parse_experiment_config(json{{"env", {{"sampler", "nope"}}}}), ConfigError);
  EXPECT_THROW(parse_experiment_config(json{{"train", {{"variant", "softest"}}}}), ConfigError);
  EXPECT_THROW(parse_experiment_config(json{{"eval", {{"scenarios", {"weird"}}}}}), ConfigError);
  const ExperimentConfig cfg = parse_experiment_config(
      json{{"eval", {{"scenarios", {"standard", "adhoc_reversed", "team_size:4"}}}}});
  EXPECT_EQ(cfg.eval.scenarios.size(), 3u);
}

TEST(Checkpoint, WriteReadRoundTripIsBitIdentical) {
  EnvConfig env;
  env.width = 4;
  env.height = 4;
  env.num_agents = 2;
  env.num_sites = 2;
  NetConfig netcfg;
  netcfg.alone_hidden = {12};
  netcfg.head_hidden = {8};
  netcfg.embed_dim = 8;
  const NetworkSpec spec = make_network_spec(env, netcfg);
  std::vector<ParamStore<float>> agents;
  for (int i = 0; i < 2; ++i) {
    Rng rng(40 + i);
    agents.push_back(init_params<float>(spec, rng));
  }
  const ConfigHash hash = sha256_bytes("round-trip");
  const std::string path = (test_dir() / "roundtrip.clq").string();
  write_checkpoint(agents, hash, path);
  const LoadedCheckpoint loaded = read_checkpoint(path, &hash);
  ASSERT_EQ(loaded.agents.size(), agents.size());
  for (std::size_t i = 0; i < agents.size(); ++i) {
    ASSERT_EQ(loaded.agents[i].tensors().size(), agents[i].tensors().size());
    for (std::size_t t = 0; t < agents[i].tensors().size(); ++t) {
      EXPECT_EQ(loaded.agents[i].tensors()[t].name, agents[i].tensors()[t].name);
      EXPECT_EQ(loaded.agents[i].tensors()[t].shape, agents[i].tensors()[t].shape);
      EXPECT_TRUE(loaded.agents[i].tensors()[t].value == agents[i].tensors()[t].value);
    }
  }
}

TEST(Checkpoint, TruncationAndHashGuards) {
  EnvConfig env;
  env.width = 4;
  env.height = 4;
  env.num_agents = 1;
  env.num_sites = 2;
  NetConfig netcfg;
  netcfg.alone_hidden = {8};
  netcfg.head_hidden = {8};
  netcfg.embed_dim = 8;
  const NetworkSpec spec = make_network_spec(env, netcfg);
  Rng rng(50);
  const std::vector<ParamStore<float>> agents{init_params<float>(spec, rng)};
  const ConfigHash hash = sha256_bytes("guards");
  const std::string path = (test_dir() / "guards.clq").string();
  write_checkpoint(agents, hash, path);

  // Truncate and expect a clean failure.
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    bytes = ss.str();
  }
  const std::string truncated_path = (test_dir() / "truncated.clq").string();
  std::ofstream(truncated_path, std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  EXPECT_THROW(read_checkpoint(truncated_path), CheckpointError);

  const ConfigHash other = sha256_bytes("different");
  EXPECT_THROW(read_checkpoint(path, &other), CheckpointError);
  EXPECT_NO_THROW(read_checkpoint(path, &other, /*force=*/true));
  const std::string garbage_path = (test_dir() / "garbage.clq").string();
  std::ofstream(garbage_path, std::ios::binary) << "GARBAGE";
  EXPECT_THROW(read_checkpoint(garbage_path), CheckpointError);
}

TEST(Metrics, HeaderOnceAndFrozenFormatting) {
  RunMetricsRow row;
  row.step = 500;
  row.episode = 12;
  row.epsilon = 0.995;
  row.loss_dqn = 1.0 / 3.0;
  row.loss_mara = 0.000123456789;
  row.mean_abs_q_alone = 123456789.0;
  row.mean_abs_q_collab_at_alone = 0.5;
  row.train_return_window = 20.25;
  row.eval_return = 0.0;
  EXPECT_EQ(format_metrics_row(row),
            "500,12,0.995,0.333333333,0.000123456789,123456789,0.5,20.25,0");
  EXPECT_EQ(metrics_header(),
            "step,episode,epsilon,loss_dqn,loss_mara,mean_abs_q_alone,"
            "mean_abs_q_collab_at_alone,train_return_window,eval_return");

  const std::string path = (test_dir() / "metrics.csv").string();
  {
    MetricsWriter writer(path);
    writer.append(row);
    row.step = 1000;
    writer.append(row);
  }
  std::ifstream in(path);
  std::string line;
  int lines = 0, headers = 0;
  while (std::getline(in, line)) {
    ++lines;
    if (line == metrics_header()) ++headers;
  }
  EXPECT_EQ(lines, 3);
  EXPECT_EQ(headers, 1);

  row.loss_dqn = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(format_metrics_row(row), std::runtime_error);
}

TEST(Cli, NoArgumentsPrintsUsageAndFails) {
  EXPECT_EQ(dispatch({}), 1);
  EXPECT_EQ(dispatch({"bogus-subcommand"}), 1);
}

TEST(Cli, LemmaSweepsPass) { EXPECT_EQ(dispatch({"lemmas", "--sweeps", "50"}), 0); }

TEST(Cli, OracleToyConfigHolds) {
  const std::string config = write_file("oracle_toy.json", R"({
    "oracle": {
      "width": 4, "height": 4, "discount": 0.9, "horizon": 8,
      "agent_states": [0],
      "sites": [{"state": 5, "action": 4, "budget": 2.0}],
      "local_agents": [0],
      "C": 2
    }
  })");
  EXPECT_EQ(dispatch({"oracle", "--config", config}), 0);
}

TEST(Cli, TrainEvalVizPipeline) {
  const std::string config = write_file("tiny_train.json", R"({
    "env": {"width": 4, "height": 4, "num_agents": 2, "num_sites": 2, "step_cap": 12},
    "train": {"total_steps": 400, "batch_size": 8, "learn_start": 50,
               "buffer_capacity": 500, "metrics_cadence": 100,
               "eval_episodes_per_row": 2},
    "net": {"alone_hidden": [12], "head_hidden": [8], "embed_dim": 8},
    "eval": {"episodes": 5},
    "seed": 3
  })");
  const std::string out = (test_dir() / "run1").string();
  std::filesystem::remove_all(out);
  ASSERT_EQ(dispatch({"train", "--config", config, "--out", out}), 0);
  EXPECT_TRUE(std::filesystem::exists(out + "/metrics.csv"));
  EXPECT_TRUE(std::filesystem::exists(out + "/checkpoint.clq"));
  EXPECT_TRUE(std::filesystem::exists(out + "/config.json"));

  const std::string ckpt = out + "/checkpoint.clq";
  EXPECT_EQ(dispatch({"eval", "--config", config, "--checkpoint", ckpt, "--scenario",
                      "standard", "--episodes", "4"}),
            0);
  EXPECT_EQ(dispatch({"eval", "--config", config, "--checkpoint", ckpt, "--scenario",
                      "adhoc_reversed", "--episodes", "4"}),
            0);
  EXPECT_EQ(dispatch({"eval", "--config", config, "--checkpoint", ckpt, "--scenario",
                      "team_size:3", "--episodes", "4"}),
            0);
  EXPECT_EQ(dispatch({"eval", "--config", config, "--checkpoint", ckpt, "--scenario",
                      "warp-drive"}),
            2);

  const std::string scene = write_file("scene.json", R"({
    "agent_positions": [0, 15],
    "sites": [{"cell": 5, "type": 0, "alive": true}, {"cell": 10, "type": 1, "alive": true}],
    "rho": [[4.0, 7.0], [10.0, 2.0]],
    "steps_elapsed": 0,
    "done": false
  })");
  const std::string map_out = (test_dir() / "map.json").string();
  EXPECT_EQ(dispatch({"viz", "--config", config, "--checkpoint", ckpt, "--scene", scene,
                      "--agent", "0", "--out", map_out}),
            0);
  std::ifstream in(map_out);
  json map;
  in >> map;
  EXPECT_EQ(map.at("width").get<int>(), 4);
  EXPECT_EQ(map.at("q_actions").size(), 16u);

  // A mismatched config refuses the checkpoint unless forced.
  const std::string other_config = write_file("tiny_other.json", R"({
    "env": {"width": 4, "height": 4, "num_agents": 2, "num_sites": 2, "step_cap": 12},
    "train": {"total_steps": 500, "batch_size": 8, "learn_start": 50,
               "buffer_capacity": 500, "metrics_cadence": 100,
               "eval_episodes_per_row": 2},
    "net": {"alone_hidden": [12], "head_hidden": [8], "embed_dim": 8},
    "eval": {"episodes": 5},
    "seed": 3
  })");
  EXPECT_EQ(dispatch({"eval", "--config", other_config, "--checkpoint", ckpt, "--episodes",
                      "2"}),
            2);
  EXPECT_EQ(dispatch({"eval", "--config", other_config, "--checkpoint", ckpt, "--episodes",
                      "2", "--force"}),
            0);
}

TEST(Cli, DeterministicTrainOutputs) {
  const std::string config = write_file("tiny_det.json", R"({
    "env": {"width": 4, "height": 4, "num_agents": 2, "num_sites": 2, "step_cap": 12},
    "train": {"total_steps": 300, "batch_size": 8, "learn_start": 50,
               "buffer_capacity": 500, "metrics_cadence": 100,
               "eval_episodes_per_row": 2},
    "net": {"alone_hidden": [12], "head_hidden": [8], "embed_dim": 8},
    "seed": 11
  })");
  const std::string out1 = (test_dir() / "det1").string();
  const std::string out2 = (test_dir() / "det2").string();
  std::filesystem::remove_all(out1);
  std::filesystem::remove_all(out2);
  ASSERT_EQ(dispatch({"train", "--config", config, "--out", out1}), 0);
  ASSERT_EQ(dispatch({"train", "--config", config, "--out", out2}), 0);
  auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  EXPECT_EQ(slurp(out1 + "/metrics.csv"), slurp(out2 + "/metrics.csv"));
  EXPECT_EQ(slurp(out1 + "/checkpoint.clq"), slurp(out2 + "/checkpoint.clq"));
}
