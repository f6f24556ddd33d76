#pragma once

// Flat key=value configuration. Keys are dotted paths ("ppo.n_envs"),
// one per line; '#' starts a comment. Every run resolves to a RunConfig
// whose full snapshot can be written back out and re-read verbatim.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mintime/curriculum.hpp"
#include "mintime/env.hpp"
#include "mintime/ppo.hpp"
#include "mintime/tracker.hpp"

namespace mintime::config {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::uint64_t seed = 1;
  env::EnvConfig env;
  ppo::TrainConfig ppo;
  curriculum::CurriculumConfig curriculum;
  tracker::TrackerGains tracker;
  tracker::HarnessConfig harness;
  double harness_limit_scale = 0.5;
  double plan_sample_rate = 100.0;
  double plan_limit_scale = 1.0;
  int eval_episodes = 100;
  int eval_stage = 1;
  // Success radius for evaluate; non-positive means the stage range G.
  double eval_success_radius = 0.0;
  bool eval_randomize_dynamics = false;
  double simulate_duration = 5.0;
  std::string simulate_controller = "hover";
  int ablate_seeds = 3;

  void validate() const {
    env.validate();
    ppo.validate();
    curriculum.validate();
    tracker.validate();
    harness.validate();
    if (!(plan_sample_rate > 0.0)) throw std::invalid_argument("plan.sample_rate must be positive");
    if (!(plan_limit_scale > 0.0) || !(harness_limit_scale > 0.0))
      throw std::invalid_argument("limit scales must be positive");
    if (eval_episodes < 1) throw std::invalid_argument("eval.episodes must be >= 1");
    if (eval_stage < 1 || eval_stage > 4) throw std::invalid_argument("eval.stage must be in 1..4");
    if (!(simulate_duration > 0.0)) throw std::invalid_argument("simulate.duration must be positive");
    if (simulate_controller != "hover" && simulate_controller != "tracker" &&
        simulate_controller != "policy")
      throw std::invalid_argument("simulate.controller must be hover, tracker or policy");
    if (ablate_seeds < 1) throw std::invalid_argument("ablate.seeds must be >= 1");
  }
};

// ------------------------------------------------------------ value codecs

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end || !std::isfinite(out))
    throw ConfigError("config: '" + key + "' expects a finite number, got '" + v + "'");
  return out;
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& v) {
  Int out{};
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end)
    throw ConfigError("config: '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config: '" + key + "' expects a boolean, got '" + v + "'");
}

}  // namespace detail

struct Binding {
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

inline std::vector<Binding> bindings(RunConfig& c) {
  std::vector<Binding> b;
  auto num = [&b](std::string key, double& ref) {
    b.push_back({key, [&ref] { return detail::fmt(ref); },
                 [&ref, key](const std::string& v) { ref = detail::parse_double(key, v); }});
  };
  auto integer = [&b](std::string key, int& ref) {
    b.push_back({key, [&ref] { return std::to_string(ref); },
                 [&ref, key](const std::string& v) { ref = detail::parse_int<int>(key, v); }});
  };
  auto i64 = [&b](std::string key, std::int64_t& ref) {
    b.push_back({key, [&ref] { return std::to_string(ref); },
                 [&ref, key](const std::string& v) { ref = detail::parse_int<std::int64_t>(key, v); }});
  };
  auto u64 = [&b](std::string key, std::uint64_t& ref) {
    b.push_back({key, [&ref] { return std::to_string(ref); },
                 [&ref, key](const std::string& v) { ref = detail::parse_int<std::uint64_t>(key, v); }});
  };
  auto size = [&b](std::string key, std::size_t& ref) {
    b.push_back({key, [&ref] { return std::to_string(ref); },
                 [&ref, key](const std::string& v) { ref = detail::parse_int<std::size_t>(key, v); }});
  };
  auto flag = [&b](std::string key, bool& ref) {
    b.push_back({key, [&ref] { return std::string(ref ? "true" : "false"); },
                 [&ref, key](const std::string& v) { ref = detail::parse_bool(key, v); }});
  };
  auto vec3 = [&num](const std::string& key, Vec3& ref) {
    num(key + "_x", ref.x());
    num(key + "_y", ref.y());
    num(key + "_z", ref.z());
  };

  u64("seed", c.seed);

  auto& e = c.env;
  num("env.episode_duration", e.episode_duration);
  num("env.control_period", e.control_period);
  num("env.physics_dt", e.physics_dt);
  num("env.bounds_scale", e.bounds_scale);
  flag("env.randomize_dynamics", e.randomize_dynamics);
  num("env.mass_randomization", e.mass_randomization);
  num("env.inertia_randomization", e.inertia_randomization);
  num("env.gravity_randomization", e.gravity_randomization);
  num("env.convergence_radius", e.convergence_radius);
  integer("env.max_reset_attempts", e.max_reset_attempts);

  auto& v = e.vehicle;
  num("vehicle.mass", v.mass);
  vec3("vehicle.inertia", v.inertia);
  num("vehicle.arm_length", v.arm_length);
  num("vehicle.torque_constant", v.torque_constant);
  num("vehicle.rotor_speed_max", v.rotor_speed_max);
  num("vehicle.thrust_coeff", v.thrust_coeff);
  num("vehicle.motor_time_constant", v.motor_time_constant);
  vec3("vehicle.drag", v.drag);
  vec3("vehicle.gravity", v.gravity);

  num("action.thrust_min", e.action_bounds.thrust_min);
  num("action.thrust_max", e.action_bounds.thrust_max);
  num("action.rate_max", e.action_bounds.rate_max);

  const char* axes[3] = {"x", "y", "z"};
  for (int i = 0; i < 3; ++i) {
    num(std::string("limits.") + axes[i] + "_min", e.pmm_limits.axis[i].a_min);
    num(std::string("limits.") + axes[i] + "_max", e.pmm_limits.axis[i].a_max);
  }

  auto& r = e.reward;
  num("reward.k_goal", r.k_goal);
  num("reward.k_heading", r.k_heading);
  num("reward.k_stay", r.k_stay);
  num("reward.k_accel", r.k_accel);
  num("reward.k_rate", r.k_rate);
  num("reward.k_thrust_smooth", r.k_thrust_smooth);
  num("reward.k_rate_cmd_smooth", r.k_rate_cmd_smooth);
  num("reward.k_pmm_pos", r.k_pmm_pos);
  num("reward.k_pmm_vel", r.k_pmm_vel);
  num("reward.termination", r.termination);
  b.push_back({"reward.penalty_sign",
               [&r] { return std::string(r.penalty_sign == env::PenaltySign::kNegated ? "negated" : "literal"); },
               [&r](const std::string& s) {
                 if (s == "negated") r.penalty_sign = env::PenaltySign::kNegated;
                 else if (s == "literal") r.penalty_sign = env::PenaltySign::kLiteral;
                 else throw ConfigError("config: 'reward.penalty_sign' expects negated or literal, got '" + s + "'");
               }});
  b.push_back({"reward.stay_mode",
               [&r] { return std::string(r.stay_mode == env::StayMode::kAlignment ? "alignment" : "literal"); },
               [&r](const std::string& s) {
                 if (s == "alignment") r.stay_mode = env::StayMode::kAlignment;
                 else if (s == "literal") r.stay_mode = env::StayMode::kLiteral;
                 else throw ConfigError("config: 'reward.stay_mode' expects alignment or literal, got '" + s + "'");
               }});

  auto& p = c.ppo;
  num("ppo.gamma", p.gamma);
  num("ppo.gae_lambda", p.gae_lambda);
  num("ppo.lr_start", p.lr_start);
  num("ppo.lr_end", p.lr_end);
  integer("ppo.steps_per_env", p.steps_per_env);
  integer("ppo.n_envs", p.n_envs);
  i64("ppo.total_steps", p.total_steps);
  num("ppo.clip", p.update.loss.clip);
  num("ppo.value_coef", p.update.loss.value_coef);
  num("ppo.entropy_coef", p.update.loss.entropy_coef);
  integer("ppo.epochs", p.update.epochs);
  integer("ppo.minibatch", p.update.minibatch);
  num("ppo.max_grad_norm", p.update.max_grad_norm);
  flag("ppo.normalize_advantages", p.update.normalize_advantages);
  integer("ppo.hidden", p.hidden);
  num("ppo.init_log_std", p.init_log_std);
  num("ppo.adam_eps", p.adam_eps);
  num("ppo.obs_clip", p.obs_clip);
  num("ppo.reward_scale", p.reward_scale);
  flag("ppo.bootstrap_time_limit", p.bootstrap_time_limit);
  integer("ppo.eval_every", p.eval_every);
  integer("ppo.checkpoint_every", p.checkpoint_every);
  size("ppo.threads", p.threads);

  auto& cu = c.curriculum;
  flag("curriculum.enabled", cu.enabled);
  integer("curriculum.start_stage", cu.start_stage);
  integer("curriculum.final_stage", cu.final_stage);
  num("curriculum.threshold", cu.threshold);
  integer("curriculum.eval_rollouts", cu.eval_rollouts);
  flag("curriculum.eval_randomize_dynamics", cu.eval_randomize_dynamics);
  u64("curriculum.eval_seed", cu.eval_seed);

  auto& t = c.tracker;
  vec3("tracker.kp", t.kp);
  vec3("tracker.kd", t.kd);
  num("tracker.feedforward", t.feedforward);
  num("tracker.attitude", t.attitude);
  num("tracker.yaw", t.yaw);

  auto& h = c.harness;
  num("compare.arrival_radius", h.arrival_radius);
  num("compare.arrival_speed", h.arrival_speed);
  num("compare.switch_radius", h.switch_radius);
  num("compare.time_margin", h.time_margin);
  num("compare.velocity_scale", h.velocity_scale);
  flag("compare.clamp_acceleration", h.clamp_acceleration);
  num("compare.limit_scale", c.harness_limit_scale);

  num("plan.sample_rate", c.plan_sample_rate);
  num("plan.limit_scale", c.plan_limit_scale);

  integer("eval.episodes", c.eval_episodes);
  integer("eval.stage", c.eval_stage);
  num("eval.success_radius", c.eval_success_radius);
  flag("eval.randomize_dynamics", c.eval_randomize_dynamics);

  num("simulate.duration", c.simulate_duration);
  b.push_back({"simulate.controller", [&c] { return c.simulate_controller; },
               [&c](const std::string& s) { c.simulate_controller = s; }});

  integer("ablate.seeds", c.ablate_seeds);
  return b;
}

// Ordered key/value pairs with the source line of each entry.
struct Entry {
  std::string key;
  std::string value;
  std::string origin;
};

inline Entry parse_assignment(const std::string& text, const std::string& origin) {
  const auto eq = text.find('=');
  if (eq == std::string::npos)
    throw ConfigError(origin + ": expected key=value, got '" + text + "'");
  Entry e{detail::trim(text.substr(0, eq)), detail::trim(text.substr(eq + 1)), origin};
  if (e.key.empty()) throw ConfigError(origin + ": empty key");
  return e;
}

inline std::vector<Entry> read_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open '" + path.string() + "'");
  std::vector<Entry> out;
  std::string line;
  int n = 0;
  while (std::getline(f, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    out.push_back(parse_assignment(line, path.string() + ":" + std::to_string(n)));
  }
  return out;
}

inline void apply(RunConfig& c, const std::vector<Entry>& entries) {
  auto b = bindings(c);
  std::map<std::string, Binding*> index;
  for (auto& x : b) index[x.key] = &x;
  for (const auto& e : entries) {
    auto it = index.find(e.key);
    if (it == index.end()) throw ConfigError(e.origin + ": unknown key '" + e.key + "'");
    try {
      it->second->set(e.value);
    } catch (const ConfigError& err) {
      throw ConfigError(e.origin + ": " + err.what());
    }
  }
}

inline std::string snapshot(RunConfig& c) {
  std::string out;
  for (const auto& x : bindings(c)) out += x.key + " = " + x.get() + "\n";
  return out;
}

// Loads defaults, then the optional file, then overrides in order, and
// validates the result.
inline RunConfig resolve(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  RunConfig c;
  if (!file.empty()) config::apply(c, read_file(file));
  std::vector<Entry> ov;
  for (const auto& o : overrides) ov.push_back(parse_assignment(o, "override"));
  config::apply(c, ov);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

}  // namespace mintime::config
