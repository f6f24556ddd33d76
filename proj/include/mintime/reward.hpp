#pragma once

// Per-step shaped reward: seven direct terms plus a proxy term that
// tracks a minimum-time point-mass reference.

#include <cmath>

#include "mintime/pmm.hpp"
#include "mintime/quad_dynamics.hpp"
#include "mintime/types.hpp"

namespace mintime::env {

struct Goal {
  Vec3 position = Vec3::Zero();
  double heading = 0.0;
};

// How terms named as penalties treat a positive scaling constant.
enum class PenaltySign {
  kNegated,  // -|K| * magnitude for rate, thrust-change and rate-command-change
  kLiteral,  // K * magnitude exactly as tabulated
};

enum class StayMode {
  kAlignment,  // K_s * (unit displacement . unit direction to goal)
  kLiteral,    // K_s * |p_t - p_{t-1}| * |p_t - p_goal|
};

struct RewardConfig {
  double k_goal = 0.2;
  double k_heading = -1.0;
  double k_stay = 0.2;
  double k_accel = -0.15;
  double k_rate = 0.25;
  double k_thrust_smooth = 0.4;
  double k_rate_cmd_smooth = 0.35;
  double k_pmm_pos = -3.0;
  double k_pmm_vel = -0.3;
  // Convergence radius G in meters.
  double convergence_radius = 1.0;
  PenaltySign penalty_sign = PenaltySign::kNegated;
  StayMode stay_mode = StayMode::kAlignment;
  // Added once on the step that ends an episode early (out of bounds or
  // divergence). Not part of the tabulated constants.
  double termination = -2000.0;
};

struct RewardBreakdown {
  double goal = 0.0;
  double heading = 0.0;
  double stay = 0.0;
  double accel = 0.0;
  double rate = 0.0;
  double thrust_smooth = 0.0;
  double rate_cmd_smooth = 0.0;
  double pmm = 0.0;
  double termination = 0.0;
  double total = 0.0;

  double sum() const {
    return goal + heading + stay + accel + rate + thrust_smooth + rate_cmd_smooth +
           pmm + termination;
  }
};

// Everything one reward evaluation needs, aligned to the same control step.
struct RewardInputs {
  Vec3 position = Vec3::Zero();
  Vec3 position_prev = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  Vec3 velocity_prev = Vec3::Zero();
  Vec3 body_rate = Vec3::Zero();
  double heading = 0.0;
  quad::CtbrAction action;
  quad::CtbrAction action_prev;
  Goal goal;
  pmm::Sample reference;
  double control_period = 0.01;
};

inline RewardBreakdown compute_reward(const RewardInputs& in, const RewardConfig& cfg) {
  RewardBreakdown r;
  const bool negate = cfg.penalty_sign == PenaltySign::kNegated;
  auto penalty = [&](double k) { return negate ? -std::abs(k) : k; };

  const Vec3 to_goal = in.goal.position - in.position;
  const double dist = to_goal.norm();
  r.goal = cfg.k_goal * (1.0 - dist / cfg.convergence_radius);
  r.heading = cfg.k_heading * std::abs(wrap_angle(in.heading - in.goal.heading));

  const Vec3 step = in.position - in.position_prev;
  if (cfg.stay_mode == StayMode::kLiteral) {
    r.stay = cfg.k_stay * step.norm() * dist;
  } else {
    const Vec3 dir_goal = in.goal.position - in.position_prev;
    const double step_len = step.norm();
    const double dir_len = dir_goal.norm();
    if (step_len >= 1e-9 && dir_len >= 1e-9) {
      r.stay = cfg.k_stay * step.dot(dir_goal) / (step_len * dir_len);
    }
  }

  const Vec3 accel = (in.velocity - in.velocity_prev) / in.control_period;
  r.accel = cfg.k_accel * accel.norm();
  r.rate = penalty(cfg.k_rate) * in.body_rate.norm();
  r.thrust_smooth = penalty(cfg.k_thrust_smooth) * std::abs(in.action.thrust - in.action_prev.thrust);
  r.rate_cmd_smooth =
      penalty(cfg.k_rate_cmd_smooth) * (in.action.rates - in.action_prev.rates).cwiseAbs().sum();
  r.pmm = cfg.k_pmm_pos * (in.position - in.reference.p).norm() +
          cfg.k_pmm_vel * (in.velocity - in.reference.v).norm();
  r.total = r.sum();
  return r;
}

}  // namespace mintime::env
