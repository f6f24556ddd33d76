#pragma once

#include <array>
#include <cstdio>
#include <cstdlib>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mintime/parallel.hpp"
#include "mintime/pmm.hpp"
#include "mintime/quad_dynamics.hpp"
#include "mintime/reward.hpp"
#include "mintime/types.hpp"

namespace mintime::env {

inline constexpr int kObsDim = 23;
inline constexpr int kActDim = 4;

// [v(3), R row-major(9), p - p_goal(3), w(3), wrapped heading error(1),
//  previous action (thrust, rate x, rate y, rate z)(4)]
using Observation = std::array<double, kObsDim>;
// Policy-side action in [-1, 1]^4 (values outside are clamped on use).
using NormalizedAction = std::array<double, kActDim>;

namespace obs_index {
inline constexpr int kVelocity = 0;
inline constexpr int kRotation = 3;
inline constexpr int kRelPosition = 12;
inline constexpr int kBodyRate = 15;
inline constexpr int kHeading = 18;
inline constexpr int kPrevAction = 19;
}  // namespace obs_index

inline Observation observe(const quad::QuadState& s, const Goal& g,
                           const quad::CtbrAction& prev) {
  Observation o{};
  const Mat3 R = s.q.toRotationMatrix();
  for (int i = 0; i < 3; ++i) o[obs_index::kVelocity + i] = s.v[i];
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) o[obs_index::kRotation + 3 * r + c] = R(r, c);
  }
  for (int i = 0; i < 3; ++i) o[obs_index::kRelPosition + i] = s.p[i] - g.position[i];
  for (int i = 0; i < 3; ++i) o[obs_index::kBodyRate + i] = s.w[i];
  o[obs_index::kHeading] = wrap_angle(yaw_of(s.q) - g.heading);
  o[obs_index::kPrevAction] = prev.thrust;
  for (int i = 0; i < 3; ++i) o[obs_index::kPrevAction + 1 + i] = prev.rates[i];
  return o;
}

// Affine map between the normalized policy action and CTBR bounds; zero
// maps to the middle of each range.
inline quad::CtbrAction to_ctbr(const NormalizedAction& u, const quad::ActionBounds& b) {
  auto c = [](double x) { return std::clamp(x, -1.0, 1.0); };
  quad::CtbrAction a;
  a.thrust = b.thrust_min + 0.5 * (c(u[0]) + 1.0) * (b.thrust_max - b.thrust_min);
  for (int i = 0; i < 3; ++i) a.rates[i] = c(u[i + 1]) * b.rate_max;
  return a;
}

inline NormalizedAction to_normalized(const quad::CtbrAction& a, const quad::ActionBounds& b) {
  NormalizedAction u{};
  u[0] = 2.0 * (a.thrust - b.thrust_min) / (b.thrust_max - b.thrust_min) - 1.0;
  for (int i = 0; i < 3; ++i) u[i + 1] = a.rates[i] / b.rate_max;
  return u;
}

struct EnvConfig {
  double episode_duration = 5.0;
  double control_period = 0.01;
  double physics_dt = 0.001;
  // Half width of the spawn box around the goal, per axis.
  double spawn_half_width = 1.0;
  // Out-of-bounds box = spawn box scaled by this factor.
  double bounds_scale = 1.5;
  bool randomize_dynamics = true;
  double mass_randomization = 0.3;
  double inertia_randomization = 0.3;
  double gravity_randomization = 0.0;
  // Convergence radius; non-positive means "use spawn_half_width".
  double convergence_radius = 0.0;
  int max_reset_attempts = 10;
  quad::QuadParams vehicle;
  quad::ActionBounds action_bounds;
  pmm::Limits pmm_limits;
  RewardConfig reward;

  int substeps() const {
    return static_cast<int>(std::lround(control_period / physics_dt));
  }
  int max_steps() const {
    return static_cast<int>(std::lround(episode_duration / control_period));
  }
  double goal_radius() const {
    return convergence_radius > 0.0 ? convergence_radius : spawn_half_width;
  }

  void validate() const {
    vehicle.validate();
    if (!(physics_dt > 0.0) || !(control_period > 0.0))
      throw std::invalid_argument("env: time steps must be positive");
    if (std::abs(substeps() * physics_dt - control_period) > 1e-12)
      throw std::invalid_argument("env: control period must be an integer multiple of physics_dt");
    if (!(episode_duration > 0.0)) throw std::invalid_argument("env: episode duration must be positive");
    if (!(spawn_half_width > 0.0)) throw std::invalid_argument("env: spawn half width must be positive");
    if (!(bounds_scale >= 1.0)) throw std::invalid_argument("env: bounds_scale must be >= 1");
    if (mass_randomization < 0.0 || mass_randomization >= 1.0 || inertia_randomization < 0.0 ||
        inertia_randomization >= 1.0 || gravity_randomization < 0.0 || gravity_randomization >= 1.0)
      throw std::invalid_argument("env: randomization fractions must be in [0, 1)");
    if (max_reset_attempts < 1) throw std::invalid_argument("env: max_reset_attempts must be >= 1");
    if (!(action_bounds.thrust_max > action_bounds.thrust_min) || !(action_bounds.rate_max > 0.0))
      throw std::invalid_argument("env: invalid action bounds");
    for (const auto& a : pmm_limits.axis) {
      if (!a.valid()) throw std::invalid_argument("env: invalid planner limits");
    }
  }
};

enum class DoneReason { kNone, kTimeLimit, kOutOfBounds, kDivergence };

inline std::string_view to_string(DoneReason r) {
  switch (r) {
    case DoneReason::kNone: return "none";
    case DoneReason::kTimeLimit: return "time_limit";
    case DoneReason::kOutOfBounds: return "out_of_bounds";
    case DoneReason::kDivergence: return "divergence";
  }
  return "unknown";
}

struct StepInfo {
  RewardBreakdown reward;
  pmm::Sample reference;
  quad::CtbrAction applied;  // after clamping
  bool saturated = false;
  DoneReason reason = DoneReason::kNone;
  double time = 0.0;
  // Last observation of a finished episode (before any auto-reset).
  Observation final_observation{};
};

struct StepResult {
  Observation observation{};
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

class EpisodeFinished : public std::logic_error {
 public:
  EpisodeFinished() : std::logic_error("env: step() called on a finished episode") {}
};

class QuadEnv {
 public:
  explicit QuadEnv(EnvConfig cfg = {}, std::uint64_t seed = 0)
      : cfg_(std::move(cfg)), rng_(seed) {
    cfg_.validate();
    plant_ = cfg_.vehicle;
    ctrl_ = quad::LowLevelController::for_params(cfg_.vehicle);
  }

  const EnvConfig& config() const { return cfg_; }
  void set_spawn_half_width(double w) {
    cfg_.spawn_half_width = w;
    cfg_.validate();
  }
  void set_randomize_dynamics(bool on) { cfg_.randomize_dynamics = on; }

  Observation reset(std::uint64_t seed) {
    rng_.seed(seed);
    return reset();
  }

  Observation reset() {
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_real_distribution<double> heading(-kPi, kPi);
    plant_ = cfg_.vehicle;
    if (cfg_.randomize_dynamics) {
      plant_.mass *= 1.0 + cfg_.mass_randomization * unit(rng_);
      plant_.inertia *= 1.0 + cfg_.inertia_randomization * unit(rng_);
      if (cfg_.gravity_randomization > 0.0) {
        plant_.gravity *= 1.0 + cfg_.gravity_randomization * unit(rng_);
      }
    }
    goal_ = Goal{Vec3::Zero(), heading(rng_)};
    const double w = cfg_.spawn_half_width;
    for (int attempt = 0;; ++attempt) {
      Vec3 start;
      for (int i = 0; i < 3; ++i) start[i] = w * unit(rng_);
      const double yaw = heading(rng_);
      try {
        reference_ = pmm::plan_state_to_state(start, Vec3::Zero(), goal_.position,
                                              Vec3::Zero(), cfg_.pmm_limits);
      } catch (const pmm::InfeasibleError&) {
        if (attempt + 1 >= cfg_.max_reset_attempts) throw;
        continue;
      }
      state_ = quad::QuadState::hover_at(start, plant_, yaw);
      break;
    }
    prev_action_ = hover_action();
    steps_ = 0;
    done_ = false;
    return observe(state_, goal_, prev_action_);
  }

  // Places the vehicle at a given hover state and plans from there; used by
  // harnesses that need exact initial conditions.
  Observation reset_to(const quad::QuadState& start, const Goal& goal) {
    plant_ = cfg_.vehicle;
    goal_ = goal;
    state_ = start;
    reference_ = pmm::plan_state_to_state(start.p, start.v, goal.position, Vec3::Zero(),
                                          cfg_.pmm_limits);
    prev_action_ = hover_action();
    steps_ = 0;
    done_ = false;
    return observe(state_, goal_, prev_action_);
  }

  StepResult step(const quad::CtbrAction& raw) {
    if (done_) throw EpisodeFinished();
    StepResult out;
    StepInfo& info = out.info;
    const quad::CtbrAction action = cfg_.action_bounds.clamp(raw);
    info.applied = action;
    const quad::QuadState prev = state_;
    try {
      quad::SubstepInfo sub;
      for (int i = 0; i < cfg_.substeps(); ++i) {
        state_ = quad::integrate_step(state_, action, cfg_.physics_dt, plant_, ctrl_, &sub);
        info.saturated = info.saturated || sub.saturated;
      }
    } catch (const quad::NumericalDivergence&) {
      info.reason = DoneReason::kDivergence;
    }
    ++steps_;
    info.time = time();
    info.reference = reference_.sample(info.time);

    if (info.reason != DoneReason::kDivergence) {
      RewardInputs in;
      in.position = state_.p;
      in.position_prev = prev.p;
      in.velocity = state_.v;
      in.velocity_prev = prev.v;
      in.body_rate = state_.w;
      in.heading = yaw_of(state_.q);
      in.action = action;
      in.action_prev = prev_action_;
      in.goal = goal_;
      in.reference = info.reference;
      in.control_period = cfg_.control_period;
      RewardConfig rc = cfg_.reward;
      rc.convergence_radius = cfg_.goal_radius();
      info.reward = compute_reward(in, rc);
      const Vec3 bound = Vec3::Constant(cfg_.spawn_half_width * cfg_.bounds_scale);
      if (((state_.p - goal_.position).cwiseAbs().array() > bound.array()).any()) {
        info.reason = DoneReason::kOutOfBounds;
      } else if (steps_ >= cfg_.max_steps()) {
        info.reason = DoneReason::kTimeLimit;
      }
    }
    if (info.reason == DoneReason::kOutOfBounds || info.reason == DoneReason::kDivergence) {
      info.reward.termination = cfg_.reward.termination;
    }
    info.reward.total = info.reward.sum();

    if (info.reason == DoneReason::kDivergence) {
      // State is unusable; report the last finite one.
      state_ = prev;
    }
    prev_action_ = action;
    done_ = info.reason != DoneReason::kNone;
    out.observation = observe(state_, goal_, prev_action_);
    out.reward = info.reward.total;
    out.done = done_;
    info.final_observation = out.observation;
    return out;
  }

  StepResult step(const NormalizedAction& u) { return step(to_ctbr(u, cfg_.action_bounds)); }

  Observation observation() const { return observe(state_, goal_, prev_action_); }

  // Exact snapshot of the episode in progress, RNG included.
  std::string save_state() const {
    std::ostringstream os;
    os << rng_ << '\n';
    auto put = [&os](double v) {
      char buf[40];
      std::snprintf(buf, sizeof buf, "%a ", v);
      os << buf;
    };
    auto put3 = [&put](const Vec3& v) {
      for (int i = 0; i < 3; ++i) put(v[i]);
    };
    put(plant_.mass);
    put3(plant_.inertia);
    put3(plant_.gravity);
    put3(state_.p);
    put(state_.q.w());
    put(state_.q.x());
    put(state_.q.y());
    put(state_.q.z());
    put3(state_.v);
    put3(state_.w);
    for (int i = 0; i < 4; ++i) put(state_.rotor[i]);
    put3(goal_.position);
    put(goal_.heading);
    put3(reference_.start_position());
    for (int i = 0; i < 3; ++i) put(reference_.boundary(i).v0);
    put(prev_action_.thrust);
    put3(prev_action_.rates);
    os << steps_ << ' ' << (done_ ? 1 : 0) << '\n';
    return os.str();
  }

  void load_state(const std::string& text) {
    std::istringstream is(text);
    is >> rng_;
    auto get = [&is]() {
      std::string tok;
      if (!(is >> tok)) throw std::runtime_error("env: truncated state snapshot");
      return std::strtod(tok.c_str(), nullptr);
    };
    auto get3 = [&get]() {
      Vec3 v;
      for (int i = 0; i < 3; ++i) v[i] = get();
      return v;
    };
    plant_ = cfg_.vehicle;
    plant_.mass = get();
    plant_.inertia = get3();
    plant_.gravity = get3();
    state_.p = get3();
    const double qw = get(), qx = get(), qy = get(), qz = get();
    state_.q = Quat(qw, qx, qy, qz);
    state_.v = get3();
    state_.w = get3();
    for (int i = 0; i < 4; ++i) state_.rotor[i] = get();
    goal_.position = get3();
    goal_.heading = get();
    const Vec3 p0 = get3(), v0 = get3();
    reference_ = pmm::plan_state_to_state(p0, v0, goal_.position, Vec3::Zero(), cfg_.pmm_limits);
    prev_action_.thrust = get();
    prev_action_.rates = get3();
    int done = 0;
    if (!(is >> steps_ >> done)) throw std::runtime_error("env: truncated state snapshot");
    done_ = done != 0;
  }

  double time() const { return steps_ * cfg_.control_period; }
  int steps() const { return steps_; }
  bool done() const { return done_; }
  const quad::QuadState& state() const { return state_; }
  const Goal& goal() const { return goal_; }
  const quad::QuadParams& plant() const { return plant_; }
  const pmm::Trajectory& reference() const { return reference_; }
  const quad::CtbrAction& previous_action() const { return prev_action_; }
  quad::CtbrAction hover_action() const {
    return {cfg_.vehicle.gravity.norm(), Vec3::Zero()};
  }

 private:
  EnvConfig cfg_;
  std::mt19937_64 rng_;
  quad::QuadParams plant_;
  quad::LowLevelController ctrl_;
  quad::QuadState state_;
  Goal goal_;
  pmm::Trajectory reference_;
  quad::CtbrAction prev_action_;
  int steps_ = 0;
  bool done_ = true;
};

// N independent environments stepped in lockstep. Instance i draws from
// its own seed stream derived from (seed, i), so a batch reproduces N
// separately seeded scalar environments exactly. Finished instances are
// reset automatically; their StepResult carries the fresh observation and
// the terminal one in info.final_observation.
class VectorEnv {
 public:
  VectorEnv(std::size_t n, const EnvConfig& cfg, std::uint64_t seed,
            std::size_t threads = 1)
      : threads_(threads) {
    if (n == 0) throw std::invalid_argument("env: vector env needs at least one instance");
    envs_.reserve(n);
    for (std::size_t i = 0; i < n; ++i) envs_.emplace_back(cfg, instance_seed(seed, i));
    results_.resize(n);
  }

  static std::uint64_t instance_seed(std::uint64_t seed, std::size_t i) {
    return derive_seed(seed, i);
  }

  std::size_t size() const { return envs_.size(); }
  QuadEnv& operator[](std::size_t i) { return envs_[i]; }
  const QuadEnv& operator[](std::size_t i) const { return envs_[i]; }

  void set_spawn_half_width(double w) {
    for (auto& e : envs_) e.set_spawn_half_width(w);
  }

  std::vector<Observation> reset_all() {
    std::vector<Observation> obs(envs_.size());
    parallel_for(envs_.size(), threads_, [&](std::size_t i) { obs[i] = envs_[i].reset(); });
    return obs;
  }

  const std::vector<StepResult>& step_all(std::span<const NormalizedAction> actions) {
    if (actions.size() != envs_.size())
      throw std::invalid_argument("env: action batch size mismatch");
    parallel_for(envs_.size(), threads_, [&](std::size_t i) {
      StepResult r = envs_[i].step(actions[i]);
      if (r.done) r.observation = envs_[i].reset();
      results_[i] = std::move(r);
    });
    return results_;
  }

 private:
  std::vector<QuadEnv> envs_;
  std::vector<StepResult> results_;
  std::size_t threads_;
};

}  // namespace mintime::env
