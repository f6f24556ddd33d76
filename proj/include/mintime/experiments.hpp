#pragma once

// Experiment drivers behind the command-line subcommands: training with
// metrics/checkpoint output, deterministic evaluation, single-episode
// simulation traces and the curriculum ablation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "mintime/config.hpp"
#include "mintime/curriculum.hpp"
#include "mintime/io.hpp"
#include "mintime/ppo.hpp"
#include "mintime/tracker.hpp"

namespace mintime::experiments {

namespace fs = std::filesystem;

// ------------------------------------------------------------- evaluation

struct EvalSummary {
  std::vector<curriculum::RolloutOutcome> rollouts;
  double rmse = 0.0;
  double success_radius = 0.0;
  double success_rate = 0.0;
  double mean_final_distance = 0.0;
};

inline env::EnvConfig eval_env(env::EnvConfig base, int stage, bool randomize) {
  base.spawn_half_width = curriculum::stage_range(stage);
  base.randomize_dynamics = randomize;
  return base;
}

template <typename Policy>
EvalSummary evaluate_policy(Policy&& policy, const env::EnvConfig& cfg, int episodes,
                            std::uint64_t seed, double success_radius, std::size_t threads = 1) {
  EvalSummary s;
  s.rollouts = curriculum::run_rollouts(policy, cfg, episodes, seed, threads);
  s.rmse = curriculum::endpoint_rmse(s.rollouts);
  s.success_radius = success_radius > 0.0 ? success_radius : cfg.spawn_half_width;
  int ok = 0;
  double dist = 0.0;
  for (const auto& r : s.rollouts) {
    ok += r.final_distance < s.success_radius;
    dist += r.final_distance;
  }
  s.success_rate = static_cast<double>(ok) / s.rollouts.size();
  s.mean_final_distance = dist / s.rollouts.size();
  return s;
}

inline EvalSummary evaluate_agent(const ppo::Agent& agent, const config::RunConfig& c) {
  return evaluate_policy(agent.policy(), eval_env(c.env, c.eval_stage, c.eval_randomize_dynamics),
                         c.eval_episodes, c.seed, c.eval_success_radius, c.ppo.threads);
}

inline std::string episodes_csv(const EvalSummary& s) {
  std::string out =
      "episode,start_x,start_y,start_z,final_x,final_y,final_z,final_distance,final_speed,duration,"
      "episode_return,reason,success\n";
  for (std::size_t i = 0; i < s.rollouts.size(); ++i) {
    const auto& r = s.rollouts[i];
    out += std::to_string(i);
    for (const Vec3* v : {&r.start, &r.final_position})
      for (int k = 0; k < 3; ++k) out += "," + io::num((*v)[k]);
    out += "," + io::num(r.final_distance) + "," + io::num(r.final_speed) + "," + io::num(r.duration) +
           "," + io::num(r.episode_return) + "," + std::string(env::to_string(r.reason)) + "," +
           (r.final_distance < s.success_radius ? "1" : "0") + "\n";
  }
  return out;
}

inline std::string eval_summary_csv(const EvalSummary& s) {
  return "episodes,rmse,success_radius,success_rate,mean_final_distance\n" +
         std::to_string(s.rollouts.size()) + "," + io::num(s.rmse) + "," + io::num(s.success_radius) +
         "," + io::num(s.success_rate) + "," + io::num(s.mean_final_distance) + "\n";
}

// --------------------------------------------------------------- training

struct TrainOptions {
  bool curriculum = true;
  fs::path out;     // empty: nothing written
  fs::path resume;  // optional checkpoint
  std::function<void(const ppo::IterationMetrics&)> progress;
};

struct TrainOutcome {
  ppo::Agent agent;
  int final_stage = 1;
  int iterations = 0;
};

inline config::RunConfig with_curriculum(config::RunConfig c, bool enabled) {
  if (!enabled) {
    c.curriculum.start_stage = 4;
    c.curriculum.final_stage = 4;
    c.curriculum.enabled = false;
  }
  return c;
}

// Hash of every setting that changes training results.
inline std::uint64_t training_hash(config::RunConfig c) {
  std::string keep;
  std::istringstream in(config::snapshot(c));
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("ppo.threads ", 0) == 0 || line.rfind("ppo.checkpoint_every ", 0) == 0) continue;
    keep += line + "\n";
  }
  return ppo::fnv1a(keep);
}

// Drops metric rows past the given iteration so a resumed run continues
// the file exactly where the checkpoint left off.
inline void truncate_metrics(const fs::path& path, int iteration) {
  std::ifstream in(path);
  std::string header, kept, line;
  std::getline(in, header);
  while (std::getline(in, line)) {
    if (std::stoi(line.substr(0, line.find(','))) <= iteration) kept += line + "\n";
  }
  in.close();
  io::write_text(path, header + "\n" + kept);
}

inline TrainOutcome train(config::RunConfig c, const TrainOptions& opt) {
  c = with_curriculum(std::move(c), opt.curriculum);
  c.ppo.seed = c.seed;
  const std::uint64_t hash = training_hash(c);
  ppo::Trainer tr(c.ppo, c.env, c.curriculum, hash);
  if (!opt.resume.empty()) tr.resume(opt.resume);

  std::ofstream metrics;
  fs::path ckpt_dir;
  if (!opt.out.empty()) {
    fs::create_directories(opt.out);
    ckpt_dir = opt.out / "checkpoints";
    fs::create_directories(ckpt_dir);
    const fs::path mpath = opt.out / "metrics.csv";
    const bool append = !opt.resume.empty() && fs::exists(mpath);
    if (append) truncate_metrics(mpath, tr.iteration());
    metrics.open(mpath, append ? std::ios::app : std::ios::trunc);
    if (!metrics) throw std::runtime_error("cannot write '" + mpath.string() + "'");
    if (!append) metrics << ppo::csv_header() << "\n";
  }
  tr.train(
      [&](const ppo::IterationMetrics& m) {
        if (metrics.is_open()) metrics << ppo::csv_row(m) << "\n" << std::flush;
        if (opt.progress) opt.progress(m);
      },
      [&](const ppo::IterationMetrics& m) {
        if (ckpt_dir.empty()) return;
        char name[64];
        std::snprintf(name, sizeof name, "iter_%05d.bin", m.iteration);
        tr.save(ckpt_dir / name);
      });
  if (!opt.out.empty()) tr.save(opt.out / "policy.bin");
  return {tr.agent(), tr.curriculum().stage(), tr.iteration()};
}

// ---------------------------------------------------------------- ablation

struct AblationRow {
  std::uint64_t seed = 0;
  std::string variant;
  int final_stage = 1;
  EvalSummary eval;
};

inline std::uint64_t ablation_eval_seed(std::uint64_t base) { return derive_seed(base, 0xab1a7eULL); }

// Trains both variants for each seed and scores every final policy on the
// same stage-1 rollouts.
inline std::vector<AblationRow> ablate(const config::RunConfig& c, const fs::path& out,
                                       const std::function<void(const std::string&)>& log = {}) {
  std::vector<AblationRow> rows;
  for (int k = 0; k < c.ablate_seeds; ++k) {
    for (bool cur : {true, false}) {
      config::RunConfig rc = c;
      rc.seed = c.seed + static_cast<std::uint64_t>(k);
      AblationRow row;
      row.seed = rc.seed;
      row.variant = cur ? "curriculum" : "no_curriculum";
      TrainOptions opt;
      opt.curriculum = cur;
      if (!out.empty()) opt.out = out / row.variant / ("seed_" + std::to_string(rc.seed));
      const TrainOutcome t = train(rc, opt);
      row.final_stage = t.final_stage;
      row.eval = evaluate_policy(t.agent.policy(), eval_env(c.env, 1, c.eval_randomize_dynamics),
                                 c.eval_episodes, ablation_eval_seed(c.seed), c.eval_success_radius,
                                 c.ppo.threads);
      if (log) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "seed %llu %s: stage %d, stage-1 rmse %.4f, success %.2f",
                      static_cast<unsigned long long>(row.seed), row.variant.c_str(), row.final_stage,
                      row.eval.rmse, row.eval.success_rate);
        log(buf);
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

inline int curriculum_wins(const std::vector<AblationRow>& rows) {
  int wins = 0;
  for (std::size_t i = 0; i + 1 < rows.size(); i += 2) {
    if (rows[i].variant == "curriculum" && rows[i + 1].variant == "no_curriculum" &&
        rows[i].eval.rmse < rows[i + 1].eval.rmse)
      ++wins;
  }
  return wins;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "seed,variant,final_stage,stage1_rmse,stage1_success_rate,stage1_mean_final_distance\n";
  for (const auto& r : rows)
    out += std::to_string(r.seed) + "," + r.variant + "," + std::to_string(r.final_stage) + "," +
           io::num(r.eval.rmse) + "," + io::num(r.eval.success_rate) + "," +
           io::num(r.eval.mean_final_distance) + "\n";
  return out;
}

// -------------------------------------------------------------- simulate

// One environment episode under a fixed controller; the trace has time,
// 17 state values, 4 commanded actions, per-term rewards and the reference.
template <typename Controller>
std::string simulate_episode(const config::RunConfig& c, Controller&& controller, std::string* summary) {
  env::EnvConfig ec = c.env;
  ec.episode_duration = c.simulate_duration;
  ec.spawn_half_width = curriculum::stage_range(c.eval_stage);
  env::QuadEnv e(ec, c.seed);
  e.reset();
  std::string out =
      "t,px,py,pz,qw,qx,qy,qz,vx,vy,vz,wx,wy,wz,rotor1,rotor2,rotor3,rotor4,"
      "thrust_cmd,wx_cmd,wy_cmd,wz_cmd,"
      "r_goal,r_heading,r_stay,r_accel,r_rate,r_thrust_smooth,r_rate_cmd_smooth,r_pmm,r_termination,r_total,"
      "ref_px,ref_py,ref_pz,ref_vx,ref_vy,ref_vz\n";
  auto row = [&](double t, const quad::CtbrAction& a, const env::RewardBreakdown& r, const pmm::Sample& ref) {
    const auto& s = e.state();
    out += io::num(t);
    for (int i = 0; i < 3; ++i) out += "," + io::num(s.p[i]);
    out += "," + io::num(s.q.w()) + "," + io::num(s.q.x()) + "," + io::num(s.q.y()) + "," + io::num(s.q.z());
    for (int i = 0; i < 3; ++i) out += "," + io::num(s.v[i]);
    for (int i = 0; i < 3; ++i) out += "," + io::num(s.w[i]);
    for (int i = 0; i < 4; ++i) out += "," + io::num(s.rotor[i]);
    out += "," + io::num(a.thrust);
    for (int i = 0; i < 3; ++i) out += "," + io::num(a.rates[i]);
    for (double x : {r.goal, r.heading, r.stay, r.accel, r.rate, r.thrust_smooth, r.rate_cmd_smooth, r.pmm,
                     r.termination, r.total})
      out += "," + io::num(x);
    for (int i = 0; i < 3; ++i) out += "," + io::num(ref.p[i]);
    for (int i = 0; i < 3; ++i) out += "," + io::num(ref.v[i]);
    out += "\n";
  };
  row(0.0, e.previous_action(), env::RewardBreakdown{}, e.reference().sample(0.0));
  double ret = 0.0;
  env::DoneReason reason = env::DoneReason::kNone;
  while (!e.done()) {
    const quad::CtbrAction a = controller(e);
    const env::StepResult r = e.step(a);
    ret += r.reward;
    reason = r.info.reason;
    row(r.info.time, r.info.applied, r.info.reward, r.info.reference);
  }
  if (summary) {
    *summary = "steps,time,reason,episode_return,final_distance\n" + std::to_string(e.steps()) + "," +
               io::num(e.time()) + "," + std::string(env::to_string(reason)) + "," + io::num(ret) + "," +
               io::num((e.state().p - e.goal().position).norm()) + "\n";
  }
  return out;
}

}  // namespace mintime::experiments
