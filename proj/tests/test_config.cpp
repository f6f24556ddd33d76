#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "mintime/config.hpp"
#include "mintime/io.hpp"

using namespace mintime;

namespace {

std::filesystem::path temp_file(const std::string& name, const std::string& text) {
  const auto p = std::filesystem::temp_directory_path() / name;
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST(Config, SnapshotRoundTripsExactly) {
  auto c = config::resolve({}, {"ppo.n_envs=7", "env.physics_dt=0.0005", "reward.k_goal=0.123456789012345678",
                                "seed=99", "simulate.controller=tracker"});
  const std::string snap = config::snapshot(c);
  const auto f = temp_file("mintime_snapshot.cfg", snap);
  auto d = config::resolve(f, {});
  EXPECT_EQ(config::snapshot(d), snap);
  EXPECT_EQ(d.ppo.n_envs, 7);
  EXPECT_EQ(d.seed, 99u);
  EXPECT_EQ(d.env.reward.k_goal, 0.123456789012345678);
  std::filesystem::remove(f);
}

TEST(Config, EveryKeyIsListedOnce) {
  config::RunConfig c;
  std::set<std::string> keys;
  for (const auto& b : config::bindings(c)) EXPECT_TRUE(keys.insert(b.key).second) << b.key;
  EXPECT_TRUE(keys.count("ppo.clip"));
  EXPECT_TRUE(keys.count("curriculum.threshold"));
  EXPECT_TRUE(keys.count("compare.velocity_scale"));
}

TEST(Config, OverridesApplyAfterFile) {
  const auto f = temp_file("mintime_override.cfg", "# comment\nppo.n_envs = 4\n\nseed=3 # trailing\n");
  const auto c = config::resolve(f, {"ppo.n_envs=8"});
  EXPECT_EQ(c.ppo.n_envs, 8);
  EXPECT_EQ(c.seed, 3u);
  std::filesystem::remove(f);
}

TEST(Config, UnknownKeyReportsOrigin) {
  const auto f = temp_file("mintime_unknown.cfg", "seed = 1\n\nppo.nope = 2\n");
  try {
    config::resolve(f, {});
    FAIL() << "expected ConfigError";
  } catch (const config::ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(":3"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("ppo.nope"), std::string::npos);
  }
  std::filesystem::remove(f);
}

TEST(Config, BadValuesAreConfigErrors) {
  EXPECT_THROW(config::resolve({}, {"ppo.n_envs=abc"}), config::ConfigError);
  EXPECT_THROW(config::resolve({}, {"ppo.n_envs=3.5"}), config::ConfigError);
  EXPECT_THROW(config::resolve({}, {"env.randomize_dynamics=maybe"}), config::ConfigError);
  EXPECT_THROW(config::resolve({}, {"ppo.gamma=1.5"}), config::ConfigError);
  EXPECT_THROW(config::resolve({}, {"simulate.controller=joystick"}), config::ConfigError);
  EXPECT_THROW(config::resolve({}, {"novalue"}), config::ConfigError);
  EXPECT_THROW(config::resolve("/nonexistent/file.cfg", {}), config::ConfigError);
}

TEST(Waypoints, ParsesCommentsAndCommas) {
  std::istringstream in("# header\n0 0 0\n\n1.5, -2, 3  # inline\n4 5 6\n");
  const auto w = io::parse_waypoints(in, "x");
  ASSERT_EQ(w.size(), 3u);
  EXPECT_EQ(w[1], Vec3(1.5, -2, 3));
}

TEST(Waypoints, ErrorsCarryLineNumbers) {
  auto line_of = [](const std::string& text) {
    std::istringstream in(text);
    try {
      io::parse_waypoints(in, "w.txt");
    } catch (const io::ParseError& e) {
      return e.line;
    }
    return -1;
  };
  EXPECT_EQ(line_of("0 0 0\n1 2\n"), 2);
  EXPECT_EQ(line_of("0 0 0\n\n1 2 3 4\n"), 3);
  EXPECT_EQ(line_of("0 0 0\n1 nan 2\n"), 2);
  EXPECT_EQ(line_of("# only\n0 0 0\n"), 2);
}

TEST(TrajectoryCsv, SamplesAtRateThroughFinalTime) {
  const auto plan = pmm::plan_waypoints({Vec3(0, 0, 0), Vec3(5, 0, 2)}, pmm::Limits{});
  const double T = pmm::total_duration(plan);
  const std::string csv = io::trajectory_csv(plan, 100.0);
  std::istringstream in(csv);
  std::string line;
  int rows = -1;
  double t_last = -1.0;
  while (std::getline(in, line)) {
    if (rows >= 0) t_last = std::stod(line.substr(0, line.find(',')));
    ++rows;
  }
  EXPECT_EQ(rows, static_cast<int>(std::floor(T * 100.0)) + 1);
  EXPECT_LE(t_last, T);
  EXPECT_GT(t_last, T - 0.01);
}
