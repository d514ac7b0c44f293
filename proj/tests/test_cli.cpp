// End-to-end checks of the command line tool: exit codes, determinism of
// synth/train/eval, artifact round-trips and the ablation table.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "egocognav/checkpoint.hpp"
#include "egocognav/episode.hpp"
#include "egocognav/losses.hpp"
#include "egocognav/metrics.hpp"
#include "egocognav/model.hpp"
#include "json.hpp"

namespace eg = egocognav;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd =
      std::string(EGOCOGNAV_CLI_PATH) + " " + args + " > /dev/null 2> /dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path fresh_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / "egocognav_cli" / tag;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_json(const fs::path& p, const nlohmann::json& j) {
  eg::detail::write_file(p, j.dump(2) + "\n");
}

nlohmann::json tiny_model() {
  return {{"d_model", 16},        {"n_heads", 2}, {"n_fusion_layers", 1},
          {"n_decoder_layers", 1}, {"t1", 10},     {"t2", 5},
          {"ff_hidden", 32}};
}

nlohmann::json tiny_optimizer(int epochs) {
  return {{"lr_max", 3e-4},
          {"batch_size", 32},
          {"epochs", epochs},
          {"warmup_epochs", 1}};
}

std::string world_demo() {
  return (fs::path(EGOCOGNAV_SOURCE_DIR) / "configs" / "world_demo.json")
      .string();
}

// Small shared dataset; generated once through the tool itself.
const fs::path& demo_dataset() {
  static const fs::path dir = [] {
    const fs::path d = fresh_dir("dataset");
    const fs::path cfg = d / "synth.json";
    write_json(cfg, {{"world", world_demo()}, {"count", 4}, {"seed", 21}});
    if (run_cli("synth --config " + cfg.string() + " --out " + d.string()) != 0)
      throw std::runtime_error("demo dataset synth failed");
    return d;
  }();
  return dir;
}

std::vector<fs::path> sorted_files(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), root));
  std::sort(files.begin(), files.end());
  return files;
}

void expect_dirs_identical(const fs::path& a, const fs::path& b) {
  const auto fa = sorted_files(a), fb = sorted_files(b);
  ASSERT_EQ(fa, fb);
  for (const fs::path& rel : fa)
    EXPECT_EQ(eg::detail::read_file(a / rel), eg::detail::read_file(b / rel))
        << rel;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  return eg::parse_csv(eg::detail::read_file(p));
}

}  // namespace

TEST(Synth, RerunIsBitIdentical) {
  const fs::path dir = fresh_dir("synth_rerun");
  const fs::path cfg = dir / "synth.json";
  write_json(cfg, {{"world", world_demo()}, {"count", 3}, {"seed", 5}});
  const std::string a = (dir / "a").string(), b = (dir / "b").string();
  ASSERT_EQ(run_cli("synth --config " + cfg.string() + " --out " + a), 0);
  ASSERT_EQ(run_cli("synth --config " + cfg.string() + " --out " + b), 0);
  expect_dirs_identical(a, b);

  const nlohmann::json man =
      nlohmann::json::parse(eg::detail::read_file(fs::path(a) / "manifest.json"));
  ASSERT_EQ(man.at("seeds").size(), 3u);
  ASSERT_EQ(man.at("lengths").size(), 3u);
  std::size_t total = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string name = man.at("episodes")[i].get<std::string>();
    const eg::Episode ep = eg::read_episode_dir(fs::path(a) / name);
    EXPECT_EQ(ep.length(), man.at("lengths")[i].get<std::size_t>());
    total += ep.length();
  }
  EXPECT_EQ(total, man.at("total_steps").get<std::size_t>());
}

TEST(Synth, ConfigErrorsExitTwo) {
  const fs::path dir = fresh_dir("synth_errors");
  const fs::path bad = dir / "bad.json";
  write_json(bad, {{"world", world_demo()}, {"bogus", 1}});
  EXPECT_EQ(run_cli("synth --config " + bad.string() + " --out " +
                    (dir / "o").string()),
            2);
  const fs::path noworld = dir / "noworld.json";
  write_json(noworld, {{"count", 2}});
  EXPECT_EQ(run_cli("synth --config " + noworld.string() + " --out " +
                    (dir / "o").string()),
            2);
  // No output directory given anywhere.
  write_json(dir / "ok.json", {{"world", world_demo()}});
  EXPECT_EQ(run_cli("synth --config " + (dir / "ok.json").string()), 2);
}

TEST(Train, ArtifactsAndSeedDeterminism) {
  const fs::path dir = fresh_dir("train_artifacts");
  const fs::path cfg = dir / "train.json";
  write_json(cfg, {{"seed", 3},
                   {"stride", 8},
                   {"val_every", 4},
                   {"model", tiny_model()},
                   {"loss", {{"lambda_var", 0.25}, {"alpha", 0.4}}},
                   {"optimizer", tiny_optimizer(2)}});
  const std::string data = demo_dataset().string();
  const std::string base = "train --config " + cfg.string() + " --dataset " + data;
  ASSERT_EQ(run_cli(base + " --out " + (dir / "a").string()), 0);
  ASSERT_EQ(run_cli(base + " --out " + (dir / "b").string()), 0);
  ASSERT_EQ(run_cli(base + " --seed 4 --out " + (dir / "c").string()), 0);

  // Log parses and starts with the documented header.
  const auto log = read_csv(dir / "a" / "train_log.csv");
  ASSERT_EQ(log.size(), 3u);
  EXPECT_EQ(log[0], (std::vector<std::string>{"epoch", "lr", "L_traj", "L_head",
                                              "L_U", "L_aux", "L_total",
                                              "val_total"}));

  // The stored run config round-trips through the library readers and keeps
  // the configured loss weights.
  const nlohmann::json stored = nlohmann::json::parse(
      eg::detail::read_file(dir / "a" / "train_config.json"));
  const eg::LossWeights w = eg::LossWeights::from_json(stored.at("loss"));
  EXPECT_EQ(w.lambda_var, 0.25);
  EXPECT_EQ(w.alpha, 0.4);

  // The checkpoint loads back into a library model.
  const eg::ModelConfig mc =
      eg::ModelConfig::from_json(nlohmann::json::parse(eg::detail::read_file(
          dir / "a" / "checkpoint" / "model.json")));
  eg::EgoCogNav model(mc, 999);
  const eg::CheckpointMeta meta =
      eg::load_params(model.params(), dir / "a" / "checkpoint");
  EXPECT_EQ(meta.seed, 3u);
  EXPECT_GT(meta.step, 0u);

  // Same seed: identical log and parameters. Different seed: different params.
  EXPECT_EQ(eg::detail::read_file(dir / "a" / "train_log.csv"),
            eg::detail::read_file(dir / "b" / "train_log.csv"));
  EXPECT_EQ(eg::detail::read_file(dir / "a" / "checkpoint" / "params.bin"),
            eg::detail::read_file(dir / "b" / "checkpoint" / "params.bin"));
  EXPECT_NE(eg::detail::read_file(dir / "a" / "checkpoint" / "params.bin"),
            eg::detail::read_file(dir / "c" / "checkpoint" / "params.bin"));
}

TEST(Train, ErrorExitCodes) {
  const fs::path dir = fresh_dir("train_errors");
  const fs::path cfg = dir / "train.json";
  write_json(cfg, {{"model", tiny_model()}, {"optimizer", tiny_optimizer(1)}});
  EXPECT_EQ(run_cli("train --config " + cfg.string() +
                    " --dataset /no/such/dir --out " + (dir / "o").string()),
            3);
  const fs::path empty = dir / "empty";
  fs::create_directories(empty);
  EXPECT_EQ(run_cli("train --config " + cfg.string() + " --dataset " +
                    empty.string() + " --out " + (dir / "o").string()),
            3);

  const fs::path badmodel = dir / "badmodel.json";
  write_json(badmodel, {{"model", {{"d_modle", 16}}}});
  EXPECT_EQ(run_cli("train --config " + badmodel.string() + " --dataset " +
                    demo_dataset().string() + " --out " + (dir / "o").string()),
            2);

  // An absurd learning rate overflows the parameters; the non-finite loss is
  // reported as its own exit code.
  const fs::path boom = dir / "boom.json";
  write_json(boom, {{"seed", 3},
                    {"stride", 8},
                    {"val_every", 100},
                    {"model", tiny_model()},
                    {"optimizer",
                     {{"lr_max", 1e30},
                      {"batch_size", 64},
                      {"epochs", 3},
                      {"warmup_epochs", 0}}}});
  EXPECT_EQ(run_cli("train --config " + boom.string() + " --dataset " +
                    demo_dataset().string() + " --out " + (dir / "o").string()),
            4);
}

TEST(Train, ResumeContinuesStepCount) {
  const fs::path dir = fresh_dir("train_resume");
  const fs::path cfg = dir / "train.json";
  write_json(cfg, {{"seed", 9},
                   {"stride", 8},
                   {"val_every", 4},
                   {"model", tiny_model()},
                   {"optimizer", tiny_optimizer(2)}});
  const std::string base =
      "train --config " + cfg.string() + " --dataset " + demo_dataset().string();
  ASSERT_EQ(run_cli(base + " --out " + (dir / "a").string()), 0);
  const auto step_of = [&](const fs::path& out) {
    return nlohmann::json::parse(
               eg::detail::read_file(out / "checkpoint" / "manifest.json"))
        .at("step")
        .get<std::size_t>();
  };
  const std::size_t s1 = step_of(dir / "a");
  ASSERT_GT(s1, 0u);
  ASSERT_EQ(run_cli(base + " --checkpoint " + (dir / "a" / "checkpoint").string() +
                    " --out " + (dir / "b").string()),
            0);
  const std::size_t s2 = step_of(dir / "b");
  EXPECT_GT(s2, s1);

  // A checkpoint for a different architecture is a data error.
  const fs::path other = dir / "other.json";
  nlohmann::json m = tiny_model();
  m["d_model"] = 32;
  write_json(other, {{"model", m}, {"optimizer", tiny_optimizer(1)}});
  EXPECT_EQ(run_cli("train --config " + other.string() + " --dataset " +
                    demo_dataset().string() + " --checkpoint " +
                    (dir / "a" / "checkpoint").string() + " --out " +
                    (dir / "c").string()),
            3);
}

TEST(Eval, ConstVelExactOnConstantVelocityData) {
  const fs::path dir = fresh_dir("eval_constvel");
  eg::Episode ep;
  ep.id = "cv";
  ep.grid = 2;
  ep.channels = 4;
  const std::size_t len = 64;
  for (std::size_t i = 0; i < len; ++i) {
    ep.timeline.push_back(0.1 * static_cast<double>(i));
    ep.motion.push_back({0.13, 0.0, 0.01});
    ep.head.push_back(eg::Rot6D::identity());
    ep.gaze.push_back({0.5, 0.5});
    ep.goal_xy.push_back({5.0, 1.0});
    ep.uncertainty.push_back(0.0);
    ep.env_labels.push_back(0);
    ep.behavior_labels.push_back(0);
  }
  ep.features.assign(len * ep.grid * ep.grid * ep.channels, 0.25f);
  ep.compute_poses();
  eg::write_episode_dir(ep, dir / "data" / "cv");

  const fs::path cfg = dir / "eval.json";
  write_json(cfg, {{"stride", 4}});
  ASSERT_EQ(run_cli("eval --config " + cfg.string() + " --dataset " +
                    (dir / "data").string() + " --methods const_vel --out " +
                    (dir / "out").string()),
            0);
  const auto t1 = read_csv(dir / "out" / "table1.csv");
  ASSERT_EQ(t1.size(), 2u);
  EXPECT_EQ(t1[1], (std::vector<std::string>{"const_vel", "0", "0", "0", "0",
                                             "0", "0"}));
  // No uncertainty method requested: header-only table2 and table3.
  EXPECT_EQ(read_csv(dir / "out" / "table2.csv").size(), 1u);
  EXPECT_EQ(read_csv(dir / "out" / "table3.csv").size(), 1u);
}

TEST(Eval, TablesPlotsAndIdempotence) {
  const fs::path dir = fresh_dir("eval_tables");
  const fs::path cfg = dir / "run.json";
  write_json(cfg, {{"seed", 3},
                   {"stride", 8},
                   {"val_every", 4},
                   {"model", tiny_model()},
                   {"optimizer", tiny_optimizer(2)}});
  const std::string data = demo_dataset().string();
  ASSERT_EQ(run_cli("train --config " + cfg.string() + " --dataset " + data +
                    " --out " + (dir / "run").string()),
            0);
  const std::string ckpt = (dir / "run" / "checkpoint").string();
  const std::string base = "eval --config " + cfg.string() + " --dataset " +
                           data + " --checkpoint " + ckpt;
  ASSERT_EQ(run_cli(base + " --out " + (dir / "e1").string()), 0);
  ASSERT_EQ(run_cli(base + " --out " + (dir / "e2").string()), 0);
  expect_dirs_identical(dir / "e1", dir / "e2");

  // Default method set: model plus both motion baselines in table1, model
  // plus both fitted uncertainty baselines in table2, full table3.
  const auto t1 = read_csv(dir / "e1" / "table1.csv");
  ASSERT_EQ(t1.size(), 4u);
  EXPECT_EQ(t1[1][0], "egocognav");
  EXPECT_EQ(t1[2][0], "const_vel");
  EXPECT_EQ(t1[3][0], "lin_ext");
  for (std::size_t r = 1; r < t1.size(); ++r) ASSERT_EQ(t1[r].size(), 7u);
  const auto t2 = read_csv(dir / "e1" / "table2.csv");
  ASSERT_EQ(t2.size(), 4u);
  EXPECT_EQ(t2[1][0], "egocognav");
  EXPECT_EQ(t2[2][0], "emu_proxy");
  EXPECT_EQ(t2[3][0], "path_u");
  const auto t3 = read_csv(dir / "e1" / "table3.csv");
  EXPECT_GE(t3.size(), 2u);
  EXPECT_EQ(t3[0], (std::vector<std::string>{"behavior", "mean_u", "effect"}));

  // Plot data exists for every window of the primary method.
  std::size_t traj_files = 0, u_files = 0;
  for (const auto& e : fs::directory_iterator(dir / "e1" / "plotdata")) {
    const std::string name = e.path().filename().string();
    traj_files += name.rfind("traj_", 0) == 0;
    u_files += name.rfind("u_", 0) == 0;
  }
  EXPECT_GT(traj_files, 0u);
  EXPECT_EQ(u_files, 4u);

  // Method subsetting keeps table ordering stable.
  ASSERT_EQ(run_cli(base + " --methods const_vel,path_u --out " +
                    (dir / "e3").string()),
            0);
  const auto t1s = read_csv(dir / "e3" / "table1.csv");
  ASSERT_EQ(t1s.size(), 2u);
  EXPECT_EQ(t1s[1][0], "const_vel");
  const auto t2s = read_csv(dir / "e3" / "table2.csv");
  ASSERT_EQ(t2s.size(), 2u);
  EXPECT_EQ(t2s[1][0], "path_u");
}

TEST(Eval, ErrorExitCodes) {
  const fs::path dir = fresh_dir("eval_errors");
  const fs::path cfg = dir / "eval.json";
  write_json(cfg, {{"stride", 8}, {"model", tiny_model()}});
  const std::string data = demo_dataset().string();
  EXPECT_EQ(run_cli("eval --config " + cfg.string() +
                    " --dataset /no/such/dir --out " + (dir / "o").string()),
            3);
  EXPECT_EQ(run_cli("eval --config " + cfg.string() + " --dataset " + data +
                    " --methods warp_drive --out " + (dir / "o").string()),
            2);
  // Uncertainty baselines need fitted weights from a checkpoint.
  EXPECT_EQ(run_cli("eval --config " + cfg.string() + " --dataset " + data +
                    " --methods emu_proxy --out " + (dir / "o").string()),
            5);
  // Model requested without a checkpoint.
  EXPECT_EQ(run_cli("eval --config " + cfg.string() + " --dataset " + data +
                    " --methods egocognav --out " + (dir / "o").string()),
            2);
}

TEST(Ablate, DefaultVariantTable) {
  const fs::path dir = fresh_dir("ablate");
  const fs::path cfg = dir / "run.json";
  write_json(cfg, {{"seed", 3},
                   {"stride", 16},
                   {"val_every", 4},
                   {"model", tiny_model()},
                   {"optimizer", tiny_optimizer(1)}});
  ASSERT_EQ(run_cli("ablate --config " + cfg.string() + " --dataset " +
                    demo_dataset().string() + " --out " + (dir / "out").string()),
            0);
  const auto t4 = read_csv(dir / "out" / "table4.csv");
  ASSERT_EQ(t4.size(), 7u);
  EXPECT_EQ(t4[0][0], "variant");
  const std::vector<std::string> names{"full",         "no-aux",
                                       "no-traj-extras", "video+motion",
                                       "video-only",   "motion-only"};
  for (std::size_t i = 0; i < names.size(); ++i) EXPECT_EQ(t4[i + 1][0], names[i]);
  // Loss settings are recorded per row: alpha, gamma, lambda_var.
  EXPECT_EQ(t4[2][1], "0");    // no-aux: alpha
  EXPECT_EQ(t4[3][2], "1");    // no-traj-extras: gamma
  EXPECT_EQ(t4[3][3], "0");    // no-traj-extras: lambda_var
  for (const auto& row : t4) ASSERT_EQ(row.size(), 9u);
  // Each variant left a loadable checkpoint and log behind.
  for (const std::string& n : names) {
    EXPECT_TRUE(fs::exists(dir / "out" / n / "train_log.csv"));
    EXPECT_TRUE(fs::exists(dir / "out" / n / "checkpoint" / "params.bin"));
  }

  EXPECT_EQ(run_cli("ablate --config " + cfg.string() + " --dataset " +
                    demo_dataset().string() + " --variants full,warp --out " +
                    (dir / "o2").string()),
            2);
}
