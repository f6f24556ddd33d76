#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mintime/experiments.hpp"

using namespace mintime;
namespace fs = std::filesystem;

namespace {

config::RunConfig tiny() {
  return config::resolve({}, {"ppo.n_envs=2", "ppo.steps_per_env=64", "ppo.total_steps=384", "ppo.minibatch=64",
                              "ppo.epochs=1", "ppo.hidden=16", "curriculum.eval_rollouts=3", "eval.episodes=6",
                              "ppo.checkpoint_every=0"});
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream f(p);
  std::vector<std::vector<std::string>> rows;
  for (std::string line; std::getline(f, line);) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}

int column(const std::vector<std::string>& header, const std::string& name) {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  return -1;
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST(Evaluate, RmseMatchesPromotionEvaluationOnSameSeeds) {
  const auto c = tiny();
  const auto t = experiments::train(c, {});
  curriculum::CurriculumConfig cc;
  cc.eval_rollouts = 40;
  curriculum::Curriculum cur(cc);
  const auto promo = cur.evaluate_promotion(t.agent.policy(), c.env, 17);
  const auto ev = experiments::evaluate_policy(t.agent.policy(), experiments::eval_env(c.env, 1, false), 40,
                                               derive_seed(cc.eval_seed, 17), 0.0);
  EXPECT_EQ(ev.rmse, promo.rmse);
  EXPECT_EQ(ev.success_radius, 1.0);
}

TEST(Train, MetricsHaveRewardAndLengthColumns) {
  const auto dir = fresh_dir("mintime_exp_metrics");
  experiments::TrainOptions opt;
  opt.out = dir;
  experiments::train(tiny(), opt);
  const auto rows = read_csv(dir / "metrics.csv");
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_GE(column(rows[0], "mean_reward"), 0);
  EXPECT_GE(column(rows[0], "mean_episode_length"), 0);
  EXPECT_TRUE(fs::exists(dir / "policy.bin"));
  fs::remove_all(dir);
}

TEST(Train, NoCurriculumSamplesWidestRangeFromStart) {
  const auto dir = fresh_dir("mintime_exp_nocur");
  experiments::TrainOptions opt;
  opt.out = dir;
  opt.curriculum = false;
  experiments::train(tiny(), opt);
  const auto rows = read_csv(dir / "metrics.csv");
  const int stage = column(rows[0], "stage"), range = column(rows[0], "spawn_range");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i][stage], "4");
    EXPECT_EQ(rows[i][range], "20");
  }
  fs::remove_all(dir);
}

TEST(Ablate, SharedSeedsAndBothVariants) {
  auto c = tiny();
  c.ablate_seeds = 1;
  const auto dir = fresh_dir("mintime_exp_ablate");
  const auto rows = experiments::ablate(c, dir);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].seed, rows[1].seed);
  EXPECT_EQ(rows[0].variant, "curriculum");
  EXPECT_EQ(rows[1].variant, "no_curriculum");
  EXPECT_EQ(rows[1].final_stage, 4);
  EXPECT_TRUE(fs::exists(dir / "curriculum" / "seed_1" / "metrics.csv"));
  EXPECT_TRUE(fs::exists(dir / "no_curriculum" / "seed_1" / "metrics.csv"));
  EXPECT_EQ(experiments::curriculum_wins(rows), rows[0].eval.rmse < rows[1].eval.rmse ? 1 : 0);
  fs::remove_all(dir);
}

TEST(Simulate, TraceHasStateActionRewardAndReference) {
  auto c = tiny();
  c.simulate_duration = 0.5;
  c.env.randomize_dynamics = false;
  std::string summary;
  const std::string trace =
      experiments::simulate_episode(c, [](const env::QuadEnv& e) { return e.hover_action(); }, &summary);
  std::stringstream ss(trace);
  std::string header;
  std::getline(ss, header);
  EXPECT_NE(header.find("qw"), std::string::npos);
  EXPECT_NE(header.find("r_pmm"), std::string::npos);
  EXPECT_NE(header.find("ref_px"), std::string::npos);
  int rows = 0;
  for (std::string line; std::getline(ss, line);) ++rows;
  EXPECT_EQ(rows, 51);
  EXPECT_NE(summary.find("time_limit"), std::string::npos);
}

TEST(Cli, WritesOnlyUnderOutAndUsesExitCodes) {
  const auto cwd = fresh_dir("mintime_exp_cli");
  const std::string cli = MINTIME_CLI;
  auto run = [&](const std::string& args) {
    const std::string cmd = "cd \"" + cwd.string() + "\" && \"" + cli + "\" " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
  };
  EXPECT_EQ(run("plan -w line -o out"), 0);
  std::vector<std::string> top;
  for (const auto& e : fs::directory_iterator(cwd)) top.push_back(e.path().filename().string());
  EXPECT_EQ(top, std::vector<std::string>{"out"});
  EXPECT_TRUE(fs::exists(cwd / "out" / "resolved.cfg"));
  EXPECT_TRUE(fs::exists(cwd / "out" / "trajectory.csv"));
  EXPECT_EQ(run("plan -w line -s no.such.key=1 -o bad"), 2);
  EXPECT_EQ(run("plan -o bad"), 2);
  EXPECT_EQ(run("compare -o bad"), 3);
  EXPECT_EQ(run("evaluate --checkpoint missing.bin -o bad"), 3);

  // The resolved snapshot reproduces the run.
  EXPECT_EQ(run("plan -w zigzag -s plan.sample_rate=50 -o a"), 0);
  EXPECT_EQ(run("plan -w zigzag -c a/resolved.cfg -o b"), 0);
  std::ifstream fa(cwd / "a" / "trajectory.csv"), fb(cwd / "b" / "trajectory.csv");
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  EXPECT_EQ(sa.str(), sb.str());
  fs::remove_all(cwd);
}
