// mintime: plan, simulate, train, evaluate, compare and ablate.
//
// Exit codes: 0 success, 2 configuration or input error, 3 runtime error.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "mintime/config.hpp"
#include "mintime/experiments.hpp"
#include "mintime/io.hpp"
#include "mintime/tracker.hpp"

namespace fs = std::filesystem;
using namespace mintime;

namespace {

constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  long long seed = -1;
  std::string out;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config,
                  "Config file; relative names are also looked up in $MINTIME_CONFIG_DIR");
  sub->add_option("-s,--set", c.overrides, "Override key=value (repeatable)");
  sub->add_option("--seed", c.seed, "Seed override")->check(CLI::NonNegativeNumber);
  sub->add_option("-o,--out", c.out, "Output directory")->required();
}

fs::path find_config(const std::string& name) {
  if (name.empty()) {
    const char* dir = std::getenv("MINTIME_CONFIG_DIR");
    if (dir && *dir && fs::exists(fs::path(dir) / "default.cfg")) return fs::path(dir) / "default.cfg";
    return {};
  }
  fs::path p(name);
  if (fs::exists(p) || p.is_absolute()) return p;
  if (const char* dir = std::getenv("MINTIME_CONFIG_DIR")) {
    for (const fs::path& cand : {fs::path(dir) / p, fs::path(dir) / (name + ".cfg")})
      if (fs::exists(cand)) return cand;
  }
  return p;
}

config::RunConfig load(const Common& c, std::vector<std::string> extra = {}) {
  std::vector<std::string> ov = c.overrides;
  if (c.seed >= 0) ov.push_back("seed=" + std::to_string(c.seed));
  ov.insert(ov.end(), extra.begin(), extra.end());
  config::RunConfig rc = config::resolve(find_config(c.config), ov);
  fs::create_directories(c.out);
  io::write_text(fs::path(c.out) / "resolved.cfg", config::snapshot(rc));
  return rc;
}

std::vector<Vec3> load_waypoints(const std::string& arg) {
  for (const auto& n : tracker::builtin_waypoint_names())
    if (arg == n) return tracker::builtin_waypoints(n);
  return io::read_waypoints(arg);
}

std::string set_name(const std::string& arg) {
  for (const auto& n : tracker::builtin_waypoint_names())
    if (arg == n) return n;
  return fs::path(arg).stem().string();
}

// ------------------------------------------------------------- subcommands

int cmd_plan(const Common& c, const std::string& waypoints) {
  const auto rc = load(c);
  const auto wp = load_waypoints(waypoints);
  const auto plan = pmm::plan_waypoints(wp, rc.env.pmm_limits.scaled(rc.plan_limit_scale));
  io::write_text(fs::path(c.out) / "trajectory.csv", io::trajectory_csv(plan, rc.plan_sample_rate));
  std::string seg = "segment,duration\n";
  for (std::size_t i = 0; i < plan.size(); ++i)
    seg += std::to_string(i) + "," + io::num(plan[i].duration()) + "\n";
  io::write_text(fs::path(c.out) / "segments.csv", seg);
  std::printf("planned %zu segments, T = %.6f s\n", plan.size(), pmm::total_duration(plan));
  return 0;
}

int cmd_simulate(const Common& c, const std::string& controller, const std::string& checkpoint) {
  std::vector<std::string> extra;
  if (!controller.empty()) extra.push_back("simulate.controller=" + controller);
  const auto rc = load(c, extra);
  std::string summary, trace;
  if (rc.simulate_controller == "hover") {
    trace = experiments::simulate_episode(rc, [](const env::QuadEnv& e) { return e.hover_action(); }, &summary);
  } else if (rc.simulate_controller == "tracker") {
    trace = experiments::simulate_episode(
        rc,
        [&](const env::QuadEnv& e) {
          return tracker::track_step(e.state(), e.reference().sample(e.time()), e.goal().heading, rc.tracker,
                                     rc.env.action_bounds, rc.env.vehicle.gravity);
        },
        &summary);
  } else {
    if (checkpoint.empty()) throw tracker::MissingCheckpoint("simulate: controller 'policy' needs --checkpoint");
    const ppo::Agent agent = ppo::Trainer::load_agent(checkpoint);
    trace = experiments::simulate_episode(
        rc,
        [&](const env::QuadEnv& e) {
          const env::Observation o = env::observe(e.state(), e.goal(), e.previous_action());
          env::NormalizedAction a;
          agent.act(std::span(&o, 1), std::span(&a, 1));
          return env::to_ctbr(a, rc.env.action_bounds);
        },
        &summary);
  }
  io::write_text(fs::path(c.out) / "trace.csv", trace);
  io::write_text(fs::path(c.out) / "summary.csv", summary);
  std::fputs(summary.c_str(), stdout);
  return 0;
}

int cmd_train(const Common& c, bool no_curriculum, const std::string& resume, bool quiet) {
  const auto rc = load(c);
  experiments::TrainOptions opt;
  opt.curriculum = !no_curriculum;
  opt.out = c.out;
  opt.resume = resume;
  if (!quiet) {
    opt.progress = [](const ppo::IterationMetrics& m) {
      std::printf("iter %4d  steps %9lld  stage %d  reward %10.4f  ep_len %7.1f  eval_rmse %8.4f%s\n",
                  m.iteration, static_cast<long long>(m.env_steps), m.stage, m.mean_reward,
                  m.mean_episode_length, m.eval_rmse, m.promoted ? "  promoted" : "");
      std::fflush(stdout);
    };
  }
  const auto r = experiments::train(rc, opt);
  std::printf("finished after %d iterations at stage %d\n", r.iterations, r.final_stage);
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& checkpoint, int episodes, int stage) {
  std::vector<std::string> extra;
  if (episodes > 0) extra.push_back("eval.episodes=" + std::to_string(episodes));
  if (stage > 0) extra.push_back("eval.stage=" + std::to_string(stage));
  const auto rc = load(c, extra);
  const ppo::Agent agent = ppo::Trainer::load_agent(checkpoint);
  const auto s = experiments::evaluate_agent(agent, rc);
  io::write_text(fs::path(c.out) / "episodes.csv", experiments::episodes_csv(s));
  const std::string summary = experiments::eval_summary_csv(s);
  io::write_text(fs::path(c.out) / "summary.csv", summary);
  std::fputs(summary.c_str(), stdout);
  return 0;
}

int cmd_compare(const Common& c, std::vector<std::string> sets, const std::string& policy,
                bool baseline_only, double velocity_scale) {
  std::vector<std::string> extra;
  if (velocity_scale > 0.0) extra.push_back("compare.velocity_scale=" + io::num(velocity_scale));
  const auto rc = load(c, extra);
  if (policy.empty() && !baseline_only)
    throw tracker::MissingCheckpoint("compare: --policy is required unless --baseline-only is given");
  if (sets.empty()) sets = tracker::builtin_waypoint_names();
  std::optional<ppo::Agent> agent;
  if (!baseline_only) agent = ppo::Trainer::load_agent(policy);

  const auto limits = rc.env.pmm_limits.scaled(rc.harness_limit_scale);
  const fs::path traces = fs::path(c.out) / "traces";
  fs::create_directories(traces);
  std::string csv = tracker::metrics_header() + "\n";
  auto emit = [&](tracker::FlightResult r, const std::string& name, const std::string& tag) {
    r.metrics.waypoints = name;
    std::ofstream f(traces / (name + "_" + tag + ".csv"), std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write trace for " + name);
    tracker::write_trace_csv(f, r.trace);
    csv += tracker::metrics_row(r.metrics, rc.harness.velocity_scale) + "\n";
    std::printf("%-12s %-10s arrived %d  time %8.4f  planned %8.4f  max_speed %7.3f\n", name.c_str(),
                tag.c_str(), r.metrics.arrived, r.metrics.flight_time, r.metrics.planned_duration,
                r.metrics.max_speed);
  };
  for (const auto& s : sets) {
    const auto wp = load_waypoints(s);
    const std::string name = set_name(s);
    emit(tracker::run_baseline(wp, limits, rc.env.vehicle, rc.tracker, rc.harness, rc.env.action_bounds), name,
         "baseline");
    if (agent) emit(tracker::run_policy(agent->policy(), wp, limits, rc.env, rc.harness), name, "policy");
  }
  io::write_text(fs::path(c.out) / "metrics.csv", csv);
  return 0;
}

int cmd_ablate(const Common& c) {
  const auto rc = load(c);
  const auto rows = experiments::ablate(rc, c.out, [](const std::string& line) {
    std::puts(line.c_str());
    std::fflush(stdout);
  });
  io::write_text(fs::path(c.out) / "ablation.csv", experiments::ablation_csv(rows));
  std::printf("curriculum better on %d of %d seeds\n", experiments::curriculum_wins(rows), rc.ablate_seeds);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Minimum-time quadrotor planning, control and learning"};
  app.require_subcommand(1);

  Common plan_c, sim_c, train_c, eval_c, cmp_c, abl_c;

  std::string waypoints;
  auto* plan = app.add_subcommand("plan", "Plan a point-mass minimum-time trajectory through waypoints");
  add_common(plan, plan_c);
  plan->add_option("-w,--waypoints", waypoints, "Waypoint file or builtin set name")->required();

  std::string controller, sim_ckpt;
  auto* sim = app.add_subcommand("simulate", "Run one environment episode and write its trace");
  add_common(sim, sim_c);
  sim->add_option("--controller", controller, "hover, tracker or policy");
  sim->add_option("--checkpoint", sim_ckpt, "Policy checkpoint for --controller policy");

  bool no_curriculum = false, quiet = false;
  std::string resume;
  auto* train = app.add_subcommand("train", "Train a policy with PPO");
  add_common(train, train_c);
  train->add_flag("--no-curriculum", no_curriculum, "Train directly at the widest spawn range");
  train->add_option("--resume", resume, "Continue from a checkpoint");
  train->add_flag("-q,--quiet", quiet, "No per-iteration progress");

  std::string eval_ckpt;
  int episodes = 0, stage = 0;
  auto* eval = app.add_subcommand("evaluate", "Deterministic rollouts of a trained policy");
  add_common(eval, eval_c);
  eval->add_option("--checkpoint", eval_ckpt, "Policy checkpoint")->required();
  eval->add_option("--episodes", episodes, "Number of rollouts")->check(CLI::PositiveNumber);
  eval->add_option("--stage", stage, "Spawn-range stage 1-4")->check(CLI::Range(1, 4));

  std::vector<std::string> sets;
  std::string policy;
  bool baseline_only = false;
  double vscale = 0.0;
  auto* cmp = app.add_subcommand("compare", "Fly waypoint sets with the baseline tracker and a policy");
  add_common(cmp, cmp_c);
  cmp->add_option("-w,--waypoints", sets, "Waypoint files or builtin set names (default: all builtin)");
  cmp->add_option("--policy", policy, "Policy checkpoint");
  cmp->add_flag("--baseline-only", baseline_only, "Skip the policy");
  cmp->add_option("--velocity-scale", vscale, "Reference time scaling in (0, 1]");

  auto* abl = app.add_subcommand("ablate", "Curriculum versus no-curriculum over several seeds");
  add_common(abl, abl_c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  try {
    if (*plan) return cmd_plan(plan_c, waypoints);
    if (*sim) return cmd_simulate(sim_c, controller, sim_ckpt);
    if (*train) return cmd_train(train_c, no_curriculum, resume, quiet);
    if (*eval) return cmd_evaluate(eval_c, eval_ckpt, episodes, stage);
    if (*cmp) return cmd_compare(cmp_c, sets, policy, baseline_only, vscale);
    if (*abl) return cmd_ablate(abl_c);
  } catch (const config::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfigError;
  } catch (const io::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfigError;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntimeError;
  }
  return kRuntimeError;
}
