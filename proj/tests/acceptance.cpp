// Acceptance checks, one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,3,8] [--work DIR]
//
// Criteria 6 and 7 train full policies and take roughly an hour together on
// one core.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mintime/config.hpp"
#include "mintime/experiments.hpp"
#include "mintime/pmm.hpp"
#include "mintime/policy.hpp"
#include "mintime/quad_dynamics.hpp"
#include "mintime/reward.hpp"
#include "mintime/tracker.hpp"
#include "oracles.hpp"

using namespace mintime;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- 1: PMM

Outcome pmm_against_grid_search() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> pos(-10.0, 10.0), vel(-5.0, 5.0), acc(2.0, 12.0);
  std::vector<std::pair<pmm::AxisBoundary, pmm::AxisLimits>> cases;
  for (int i = 0; i < 1000; ++i) {
    pmm::AxisBoundary b{pos(rng), vel(rng), pos(rng), vel(rng)};
    pmm::AxisLimits l{-acc(rng), acc(rng)};
    cases.emplace_back(b, l);
  }
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<pmm::AxisSolution> sol;
  sol.reserve(cases.size());
  for (const auto& [b, l] : cases) sol.push_back(pmm::solve_axis(b, l));
  const double runtime = seconds_since(t0);

  double worst_boundary = 0.0, worst_duration = 0.0;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& [b, l] = cases[i];
    const auto& s = sol[i];
    const double p1 = b.p0 + b.v0 * s.t1 + 0.5 * s.a1 * s.t1 * s.t1;
    const double v1 = b.v0 + s.a1 * s.t1;
    const double p2 = p1 + v1 * s.t2 + 0.5 * s.a2 * s.t2 * s.t2;
    const double v2 = v1 + s.a2 * s.t2;
    worst_boundary = std::max({worst_boundary, std::abs(p2 - b.p2), std::abs(v2 - b.v2)});
    const double ref = oracle::grid_min_time(b.p0, b.v0, b.p2, b.v2, l.a_min, l.a_max);
    worst_duration = std::max(worst_duration, std::abs(s.duration() - ref));
  }
  return {worst_boundary <= 1e-9 && worst_duration <= 1e-3 && runtime < 5.0,
          fmt("1000 instances: max boundary error %.3g (<=1e-9), max duration gap %.3g s (<=1e-3), "
              "solve time %.4f s (<5)",
              worst_boundary, worst_duration, runtime)};
}

// ----------------------------------------------------------- 2: tracker

Outcome tracker_not_faster_than_plan() {
  const config::RunConfig c;
  const auto limits = c.env.pmm_limits.scaled(0.5);
  bool ok = true;
  std::string d;
  for (const auto& name : tracker::builtin_waypoint_names()) {
    const auto r = tracker::run_baseline(tracker::builtin_waypoints(name), limits, c.env.vehicle, c.tracker,
                                         c.harness, c.env.action_bounds);
    const bool good = r.metrics.arrived && r.metrics.flight_time >= r.metrics.planned_duration;
    ok = ok && good;
    d += fmt("%s%s %.2f s vs T %.4f s%s", d.empty() ? "" : "; ", name.c_str(), r.metrics.flight_time, r.metrics.planned_duration,
             r.metrics.arrived ? "" : " (not arrived)");
  }
  return {ok, "flight time >= planned T at 50% limits: " + d};
}

// ----------------------------------------------------------- 3: dynamics

Outcome dynamics_checks() {
  using namespace quad;
  const QuadParams p;
  const auto ctrl = LowLevelController::for_params(p);

  // Quaternion norm under random commands.
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> thr(0, 2 * kGravity), rate(-6, 6);
  const ActionBounds bounds;
  QuadState s = QuadState::hover_at(Vec3::Zero(), p);
  double qdev = 0.0;
  for (int i = 0; i < 5000; ++i) {
    s = integrate_step(s, bounds.clamp({thr(rng), Vec3(rate(rng), rate(rng), rate(rng))}), 1e-3, p, ctrl);
    qdev = std::max(qdev, std::abs(s.q.norm() - 1.0));
  }

  // Allocation round trip.
  const Mixer m(p);
  std::uniform_real_distribution<double> coll(8.0, 20.0), tq(-0.3, 0.3), tz(-0.05, 0.05);
  double alloc = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double cl = coll(rng);
    const Vec3 tau(tq(rng), tq(rng), tz(rng));
    const auto a = m.allocate(cl, tau);
    const auto [cl2, tau2] = m.forward(a.thrust);
    alloc = std::max({alloc, std::abs(cl2 - cl), (tau2 - tau).cwiseAbs().maxCoeff()});
  }

  // Ballistic drop for one second with rotors stopped.
  QuadState b;
  for (int i = 0; i < 1000; ++i) b = integrate_step(b, CtbrAction{}, 1e-3, p, ctrl);
  const double drop = std::abs(b.p.z() + 0.5 * kGravity);

  // RK4 error ratio when halving the step.
  auto run = [&](QuadState x, const Vec4& f, double dt) {
    const int n = static_cast<int>(std::lround(0.5 / dt));
    for (int i = 0; i < n; ++i) x = rigid_body_rk4(x, f, dt, p);
    return x;
  };
  auto err = [](const QuadState& a, const QuadState& c) {
    return (a.p - c.p).norm() + (a.v - c.v).norm() + (a.w - c.w).norm() +
           std::min((a.q.coeffs() - c.q.coeffs()).norm(), (a.q.coeffs() + c.q.coeffs()).norm());
  };
  QuadState s0 = QuadState::hover_at(Vec3::Zero(), p);
  s0.q = Quat(Eigen::AngleAxisd(0.3, Vec3(1, 2, 0).normalized()));
  s0.v = Vec3(2.0, -1.0, 0.5);
  s0.w = Vec3(3.0, -2.0, 4.0);
  const Vec4 f(3.5, 2.0, 3.0, 2.6);
  const QuadState ref = run(s0, f, 1.0 / 8192.0);
  const double ratio = err(run(s0, f, 0.01), ref) / err(run(s0, f, 0.005), ref);

  return {qdev <= 1e-6 && alloc <= 1e-10 && drop <= 1e-4 && ratio >= 12.0,
          fmt("quaternion norm drift %.3g (<=1e-6) over 5000 steps, allocation round trip %.3g (<=1e-10), "
              "ballistic drop error %.3g m (<=1e-4), RK4 error ratio %.2f (>=12)",
              qdev, alloc, drop, ratio)};
}

// -------------------------------------------------------------- 4: reward

Outcome reward_checks() {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-5, 5), yaw(-kPi, kPi), thr(0, 19.62), rate(-6, 6);
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    double p[3], pp[3], v[3], vp[3], w[3], goal[3], rp[3], rv[3];
    for (int i = 0; i < 3; ++i) {
      p[i] = u(rng);
      pp[i] = p[i] + 0.05 * u(rng);
      v[i] = u(rng);
      vp[i] = v[i] + 0.1 * u(rng);
      w[i] = u(rng);
      goal[i] = u(rng);
      rp[i] = u(rng);
      rv[i] = u(rng);
    }
    double act[4] = {thr(rng), rate(rng), rate(rng), rate(rng)};
    double actp[4] = {thr(rng), rate(rng), rate(rng), rate(rng)};
    const double h = yaw(rng), gh = yaw(rng), G = 1.0 + std::abs(u(rng));
    env::RewardInputs in;
    in.position = Vec3(p[0], p[1], p[2]);
    in.position_prev = Vec3(pp[0], pp[1], pp[2]);
    in.velocity = Vec3(v[0], v[1], v[2]);
    in.velocity_prev = Vec3(vp[0], vp[1], vp[2]);
    in.body_rate = Vec3(w[0], w[1], w[2]);
    in.heading = h;
    in.goal = env::Goal{Vec3(goal[0], goal[1], goal[2]), gh};
    in.action = {act[0], Vec3(act[1], act[2], act[3])};
    in.action_prev = {actp[0], Vec3(actp[1], actp[2], actp[3])};
    in.reference.p = Vec3(rp[0], rp[1], rp[2]);
    in.reference.v = Vec3(rv[0], rv[1], rv[2]);
    in.control_period = 0.01;
    env::RewardConfig cfg;
    cfg.convergence_radius = G;
    const auto r = env::compute_reward(in, cfg);
    const auto o = oracle::reward_terms(p, pp, v, vp, w, h, gh, act, actp, goal, rp, rv, 0.01, G);
    for (double e : {r.goal - o.goal, r.heading - o.heading, r.stay - o.stay, r.accel - o.accel,
                     r.rate - o.rate, r.thrust_smooth - o.thrust_smooth,
                     r.rate_cmd_smooth - o.rate_cmd_smooth, r.pmm - o.pmm})
      worst = std::max(worst, std::abs(e));
  }

  // Tabulated constants, from defaults and after a trip through a config file.
  const std::vector<std::pair<std::string, double>> table = {
      {"reward.k_goal", 0.2},           {"reward.k_heading", -1.0},         {"reward.k_stay", 0.2},
      {"reward.k_accel", -0.15},        {"reward.k_rate", 0.25},            {"reward.k_thrust_smooth", 0.4},
      {"reward.k_rate_cmd_smooth", 0.35}, {"reward.k_pmm_pos", -3.0},       {"reward.k_pmm_vel", -0.3}};
  config::RunConfig c;
  const fs::path f = fs::temp_directory_path() / "mintime_acceptance_table.cfg";
  {
    std::ofstream out(f);
    for (const auto& [k, v] : table) out << k << " = " << v << "\n";
  }
  config::RunConfig loaded = config::resolve(f, {});
  fs::remove(f);
  int exact = 0;
  std::map<std::string, std::string> def, got;
  for (const auto& b : config::bindings(c)) def[b.key] = b.get();
  for (const auto& b : config::bindings(loaded)) got[b.key] = b.get();
  for (const auto& [k, v] : table) {
    const double want = v;
    exact += std::stod(def[k]) == want && std::stod(got[k]) == want;
  }
  const bool ok = worst <= 1e-12 && exact == static_cast<int>(table.size());
  return {ok, fmt("max term deviation %.3g over 1000 tuples (<=1e-12); %d/%zu constants exact", worst, exact,
                  table.size())};
}

// ----------------------------------------------------- 5: gradient check

Outcome gradient_check() {
  using ppo::PolicyNet;
  const ppo::LossWeights w{0.2, 0.5, 0.01};
  double worst = 0.0;
  int checked = 0;
  for (std::uint64_t seed : {11u, 22u, 33u}) {
    PolicyNet<double> net(ppo::NetShape{23, 4, 256}, -0.7, seed);
    std::mt19937_64 rng(seed ^ 0xabcdef);
    std::normal_distribution<double> n(0.0, 0.1), z(0.0, 1.0);
    for (auto& p : net.params())
      for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] += n(rng);
    net.clamp_log_std();
    const int B = 16;
    ppo::Minibatch<double> mb;
    mb.obs = ppo::Mat<double>(23, B);
    for (Eigen::Index i = 0; i < mb.obs.size(); ++i) mb.obs.data()[i] = z(rng);
    PolicyNet<double>::Cache cache;
    net.forward(mb.obs, cache);
    mb.actions = cache.mean;
    for (int j = 0; j < B; ++j)
      for (int i = 0; i < 4; ++i) mb.actions(i, j) += std::exp(net.log_std()(i, 0)) * z(rng);
    mb.logp_old = ppo::gaussian_log_prob(cache.mean, net.log_std(), mb.actions);
    mb.advantages = ppo::Row<double>(B);
    mb.returns = ppo::Row<double>(B);
    for (int j = 0; j < B; ++j) {
      mb.logp_old(j) += 0.3 * z(rng);
      mb.advantages(j) = z(rng);
      mb.returns(j) = z(rng);
    }
    auto grads = net.zeros_like();
    ppo::ppo_loss<double>(net, mb, w, &grads);
    std::set<std::size_t> picks;
    std::size_t offset = 0;
    for (const auto& p : net.params()) {
      std::uniform_int_distribution<std::size_t> u(0, p.size() - 1);
      for (int k = 0; k < 4; ++k) picks.insert(offset + u(rng));
      offset += p.size();
    }
    std::uniform_int_distribution<std::size_t> all(0, net.num_params() - 1);
    while (picks.size() < 120) picks.insert(all(rng));
    for (std::size_t idx : picks) {
      const double g = PolicyNet<double>::locate(grads, idx);
      double& p = net.flat(idx);
      const double saved = p, h = 1e-5;
      p = saved + h;
      const double up = ppo::ppo_loss<double>(net, mb, w, nullptr).total;
      p = saved - h;
      const double down = ppo::ppo_loss<double>(net, mb, w, nullptr).total;
      p = saved;
      const double fd = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), 1e-6}));
      ++checked;
    }
  }
  return {worst < 1e-4 && checked >= 300,
          fmt("%d parameters over 3 seeds, worst relative error %.3g (<1e-4)", checked, worst)};
}

// ------------------------------------------------------- 6: stage-1 learning

Outcome stage_one_learning(const fs::path& work) {
  config::RunConfig c = config::resolve({}, {"ppo.n_envs=16", "ppo.total_steps=2000000", "curriculum.start_stage=1",
                                             "curriculum.final_stage=1"});
  const auto t0 = std::chrono::steady_clock::now();
  experiments::TrainOptions opt;
  opt.out = work / "stage1";
  const auto t = experiments::train(c, opt);
  const auto e = experiments::evaluate_policy(t.agent.policy(), experiments::eval_env(c.env, 1, false), 100,
                                              c.seed, 0.3, c.ppo.threads);
  const double wall = seconds_since(t0);
  io::write_text(work / "stage1" / "eval_episodes.csv", experiments::episodes_csv(e));
  return {e.success_rate >= 0.7 && wall < 1800.0,
          fmt("%d iterations, %lld env steps; %.0f%% of 100 deterministic episodes within 0.3 m (>=70%%), "
              "endpoint RMSE %.3f m, wall time %.0f s (<1800)",
              t.iterations, static_cast<long long>(t.iterations) * c.ppo.batch_size(), 100.0 * e.success_rate,
              e.rmse, wall)};
}

// ---------------------------------------------------------- 7: ablation

Outcome curriculum_ablation(const fs::path& work) {
  config::RunConfig c = config::resolve({}, {"ppo.total_steps=2000000", "ablate.seeds=3"});
  const auto rows = experiments::ablate(c, work / "ablation", [](const std::string& line) {
    std::printf("  [7] %s\n", line.c_str());
    std::fflush(stdout);
  });
  io::write_text(work / "ablation" / "ablation.csv", experiments::ablation_csv(rows));
  const int wins = experiments::curriculum_wins(rows);
  std::string d;
  for (std::size_t i = 0; i + 1 < rows.size(); i += 2)
    d += fmt("%sseed %llu %.3f vs %.3f", d.empty() ? "" : "; ", static_cast<unsigned long long>(rows[i].seed), rows[i].eval.rmse,
             rows[i + 1].eval.rmse);
  return {wins >= 2, fmt("curriculum lower stage-1 RMSE on %d of 3 seeds (>=2): ", wins) + d};
}

// ------------------------------------------------------- 8: determinism

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

std::vector<fs::path> csv_files(const fs::path& root) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().extension() == ".csv") out.push_back(fs::relative(e.path(), root));
  std::sort(out.begin(), out.end());
  return out;
}

Outcome rerun_determinism(const fs::path& work) {
  const std::string cli = MINTIME_CLI;
  const std::string cfg = std::string(MINTIME_SOURCE_DIR) + "/configs/smoke.cfg";
  const fs::path root = work / "determinism";
  fs::remove_all(root);
  auto run = [&](const std::string& args, const fs::path& out) {
    const std::string cmd = "\"" + cli + "\" " + args + " -c \"" + cfg + "\" -o \"" + out.string() + "\" > /dev/null";
    return std::system(cmd.c_str());
  };
  int total = 0, identical = 0, failures = 0;
  std::string diff;
  for (const std::string sub : {"plan", "simulate", "train", "evaluate", "compare", "ablate"}) {
    std::vector<fs::path> outs;
    for (int k = 0; k < 2; ++k) {
      const fs::path out = root / sub / std::to_string(k);
      std::string args = sub;
      if (sub == "plan") args += " -w zigzag";
      if (sub == "simulate") args += " --controller tracker";
      if (sub == "evaluate" || sub == "compare")
        args += (sub == "evaluate" ? " --checkpoint " : " --policy ") + (root / "train" / "0" / "policy.bin").string();
      failures += run(args, out) != 0;
      outs.push_back(out);
    }
    const auto a = csv_files(outs[0]), b = csv_files(outs[1]);
    if (a.empty() || a != b) {
      ++failures;
      diff += sub + " (file sets differ) ";
      continue;
    }
    for (const auto& rel : a) {
      ++total;
      if (slurp(outs[0] / rel) == slurp(outs[1] / rel))
        ++identical;
      else
        diff += sub + "/" + rel.string() + " ";
    }
  }
  return {failures == 0 && identical == total && total > 0,
          fmt("%d/%d metric CSVs byte-identical across re-runs of 6 subcommands, %d failed runs", identical, total,
              failures) +
              (diff.empty() ? "" : "; differing: " + diff)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  fs::path work = fs::temp_directory_path() / "mintime_acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string t; std::getline(ss, t, ',');) only.insert(std::stoi(t));
    } else if (a == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else {
      std::fprintf(stderr, "usage: acceptance [--only 1,2,...] [--work DIR]\n");
      return 2;
    }
  }
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"point-mass planner matches grid search", pmm_against_grid_search},
      {"baseline tracker never beats the plan", tracker_not_faster_than_plan},
      {"rigid-body dynamics invariants", dynamics_checks},
      {"reward terms and constants", reward_checks},
      {"policy gradient finite differences", gradient_check},
      {"stage-1 learning", [&] { return stage_one_learning(work); }},
      {"curriculum ablation", [&] { return curriculum_ablation(work); }},
      {"byte-identical re-runs", [&] { return rerun_determinism(work); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s criterion %d (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
