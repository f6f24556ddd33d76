#pragma once

// Baseline trajectory tracker (cascaded PD on position, reduced-attitude P
// on thrust direction, P on yaw) and the flight comparison harness that
// runs it and a learned policy over the same waypoint sets.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mintime/env.hpp"
#include "mintime/pmm.hpp"
#include "mintime/quad_dynamics.hpp"
#include "mintime/types.hpp"

namespace mintime::tracker {

struct TrackerGains {
  Vec3 kp = Vec3(6.0, 6.0, 6.0);
  Vec3 kd = Vec3(4.0, 4.0, 4.0);
  double feedforward = 1.0;
  double attitude = 10.0;
  double yaw = 3.0;

  void validate() const {
    if ((kp.array() < 0.0).any() || (kd.array() < 0.0).any() || feedforward < 0.0 ||
        attitude < 0.0 || yaw < 0.0)
      throw std::invalid_argument("tracker: gains must be non-negative");
  }
};

// Reference point in the same form the planner samples it.
inline quad::CtbrAction track_step(const quad::QuadState& s, const pmm::Sample& ref,
                                   double yaw_ref, const TrackerGains& k,
                                   const quad::ActionBounds& bounds, const Vec3& gravity,
                                   const pmm::Limits* accel_box = nullptr) {
  Vec3 acc = k.feedforward * ref.a + k.kp.cwiseProduct(ref.p - s.p) + k.kd.cwiseProduct(ref.v - s.v);
  if (accel_box) {
    for (int i = 0; i < 3; ++i) acc[i] = std::clamp(acc[i], accel_box->axis[i].a_min, accel_box->axis[i].a_max);
  }
  const Vec3 force = acc - gravity;  // mass-normalized specific force
  const Mat3 R = s.q.toRotationMatrix();
  const Vec3 zb = R.col(2);
  quad::CtbrAction a;
  a.thrust = force.dot(zb);
  const double fn = force.norm();
  Vec3 rates = Vec3::Zero();
  if (fn > 1e-9) {
    const Vec3 err = R.transpose() * zb.cross(force / fn);
    rates.x() = k.attitude * err.x();
    rates.y() = k.attitude * err.y();
  }
  rates.z() = k.yaw * wrap_angle(yaw_ref - yaw_of(s.q));
  a.rates = rates;
  return bounds.clamp(a);
}

// ------------------------------------------------------------- waypoints

inline std::vector<Vec3> builtin_waypoints(const std::string& name) {
  if (name == "line") return {Vec3(0, 0, 0), Vec3(16, 0, 0)};
  if (name == "zigzag")
    return {Vec3(0, 0, 0), Vec3(4, 4, 0), Vec3(8, -4, 0), Vec3(12, 4, 0), Vec3(16, 0, 0)};
  if (name == "semicircle") {
    // Half circle of radius 6 in a plane tilted 30 degrees about x.
    std::vector<Vec3> w;
    const double tilt = kPi / 6.0;
    for (int i = 0; i <= 6; ++i) {
      const double th = kPi - kPi * i / 6.0;
      const double y = 6.0 * std::sin(th);
      w.emplace_back(6.0 + 6.0 * std::cos(th), y * std::cos(tilt), y * std::sin(tilt));
    }
    return w;
  }
  throw std::invalid_argument("tracker: unknown waypoint set '" + name + "'");
}

inline const std::vector<std::string>& builtin_waypoint_names() {
  static const std::vector<std::string> names{"line", "zigzag", "semicircle"};
  return names;
}

// ------------------------------------------------------------- harness

struct HarnessConfig {
  double control_period = 0.01;
  double physics_dt = 0.001;
  double arrival_radius = 0.3;
  double arrival_speed = 0.5;
  // Policy goal switching: advance once inside switch_radius / 2.
  double switch_radius = 1.0;
  // Simulated time allowed beyond the planned duration.
  double time_margin = 10.0;
  // Time-scaling of the reference: positions follow p(s t), so speeds scale
  // by s and accelerations by s^2.
  double velocity_scale = 1.0;
  double yaw = 0.0;
  // Keep the commanded acceleration inside the planner's per-axis box.
  bool clamp_acceleration = true;

  void validate() const {
    if (!(control_period > 0.0) || !(physics_dt > 0.0))
      throw std::invalid_argument("harness: time steps must be positive");
    if (std::abs(std::lround(control_period / physics_dt) * physics_dt - control_period) > 1e-12)
      throw std::invalid_argument("harness: control period must be a multiple of physics_dt");
    if (!(velocity_scale > 0.0 && velocity_scale <= 1.0))
      throw std::invalid_argument("harness: velocity_scale must be in (0, 1]");
    if (!(arrival_radius > 0.0) || !(arrival_speed > 0.0) || !(switch_radius > 0.0))
      throw std::invalid_argument("harness: radii and speed threshold must be positive");
  }
};

struct TraceRow {
  double t = 0.0;
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  double speed = 0.0;
  Vec3 ref_p = Vec3::Zero();
  quad::CtbrAction action;
  int waypoint = 0;
};

struct FlightMetrics {
  std::string method;
  std::string waypoints;
  bool arrived = false;
  double flight_time = std::numeric_limits<double>::quiet_NaN();
  double max_speed = 0.0;
  double rms_tracking_error = std::numeric_limits<double>::quiet_NaN();
  double planned_duration = 0.0;
};

struct FlightResult {
  FlightMetrics metrics;
  std::vector<TraceRow> trace;
};

class MissingCheckpoint : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline pmm::Sample scaled_reference(const std::vector<pmm::Trajectory>& plan, double t, double s) {
  pmm::Sample r = pmm::sample_sequence(plan, t * s);
  r.v *= s;
  r.a *= s * s;
  return r;
}

// First control tick at which the time-scaled reference itself satisfies
// the arrival test.
inline double reference_arrival_time(const std::vector<pmm::Trajectory>& plan, const Vec3& goal,
                                     const HarnessConfig& h) {
  const double T = pmm::total_duration(plan) / h.velocity_scale;
  for (int k = 1;; ++k) {
    const double t = k * h.control_period;
    const pmm::Sample r = scaled_reference(plan, t, h.velocity_scale);
    if (((r.p - goal).norm() < h.arrival_radius && r.v.norm() < h.arrival_speed) || t >= T) return t;
  }
}

namespace detail {

inline void record(FlightResult& out, double t, const quad::QuadState& s, const Vec3& ref_p,
                   const quad::CtbrAction& a, int wp) {
  TraceRow row;
  row.t = t;
  row.p = s.p;
  row.v = s.v;
  row.speed = s.v.norm();
  row.ref_p = ref_p;
  row.action = a;
  row.waypoint = wp;
  out.metrics.max_speed = std::max(out.metrics.max_speed, row.speed);
  out.trace.push_back(row);
}

inline bool arrived(const quad::QuadState& s, const Vec3& goal, const HarnessConfig& h) {
  return (s.p - goal).norm() < h.arrival_radius && s.v.norm() < h.arrival_speed;
}

}  // namespace detail

// Baseline: track the minimum-time plan through all waypoints.
inline FlightResult run_baseline(const std::vector<Vec3>& waypoints, const pmm::Limits& limits,
                                 const quad::QuadParams& vehicle, const TrackerGains& gains,
                                 const HarnessConfig& h, const quad::ActionBounds& bounds = {}) {
  h.validate();
  gains.validate();
  const auto plan = pmm::plan_waypoints(waypoints, limits);
  const double T = pmm::total_duration(plan);
  FlightResult out;
  out.metrics.method = "baseline_tracker";
  out.metrics.planned_duration = T / h.velocity_scale;
  const auto ctrl = quad::LowLevelController::for_params(vehicle);
  const pmm::Limits box = limits.scaled(h.velocity_scale * h.velocity_scale);
  const pmm::Limits* box_ptr = h.clamp_acceleration ? &box : nullptr;
  quad::QuadState s = quad::QuadState::hover_at(waypoints.front(), vehicle, h.yaw);
  const int substeps = static_cast<int>(std::lround(h.control_period / h.physics_dt));
  const int max_steps =
      static_cast<int>(std::ceil((out.metrics.planned_duration + h.time_margin) / h.control_period));
  double err2 = 0.0;
  int n_err = 0;
  for (int k = 0;; ++k) {
    const double t = k * h.control_period;
    const pmm::Sample ref = scaled_reference(plan, t, h.velocity_scale);
    err2 += (s.p - ref.p).squaredNorm();
    ++n_err;
    if (detail::arrived(s, waypoints.back(), h) && k > 0) {
      out.metrics.arrived = true;
      out.metrics.flight_time = t;
      detail::record(out, t, s, ref.p, quad::CtbrAction{}, static_cast<int>(waypoints.size()) - 1);
      break;
    }
    if (k >= max_steps) {
      detail::record(out, t, s, ref.p, quad::CtbrAction{}, static_cast<int>(waypoints.size()) - 1);
      break;
    }
    const quad::CtbrAction a = track_step(s, ref, h.yaw, gains, bounds, vehicle.gravity, box_ptr);
    detail::record(out, t, s, ref.p, a, 0);
    for (int i = 0; i < substeps; ++i) s = quad::integrate_step(s, a, h.physics_dt, vehicle, ctrl);
  }
  out.metrics.rms_tracking_error = std::sqrt(err2 / n_err);
  return out;
}

// Learned policy flown with sequentially issued goals. The policy callable
// matches curriculum::run_rollouts.
template <typename Policy>
FlightResult run_policy(Policy&& policy, const std::vector<Vec3>& waypoints,
                        const pmm::Limits& limits, const env::EnvConfig& env_cfg,
                        const HarnessConfig& h) {
  h.validate();
  if (waypoints.size() < 2) throw std::invalid_argument("harness: need at least two waypoints");
  const auto plan = pmm::plan_waypoints(waypoints, limits);
  FlightResult out;
  out.metrics.method = "rl_policy";
  out.metrics.planned_duration = pmm::total_duration(plan) / h.velocity_scale;
  const quad::QuadParams& vehicle = env_cfg.vehicle;
  const auto ctrl = quad::LowLevelController::for_params(vehicle);
  const auto& bounds = env_cfg.action_bounds;
  quad::QuadState s = quad::QuadState::hover_at(waypoints.front(), vehicle, h.yaw);
  quad::CtbrAction prev{vehicle.gravity.norm(), Vec3::Zero()};
  const int substeps = static_cast<int>(std::lround(h.control_period / h.physics_dt));
  const int max_steps =
      static_cast<int>(std::ceil((out.metrics.planned_duration + h.time_margin) / h.control_period));
  std::size_t target = 1;
  double err2 = 0.0;
  int n_err = 0;
  std::vector<env::Observation> obs(1);
  std::vector<env::NormalizedAction> act(1);
  for (int k = 0;; ++k) {
    const double t = k * h.control_period;
    const pmm::Sample ref = scaled_reference(plan, t, h.velocity_scale);
    err2 += (s.p - ref.p).squaredNorm();
    ++n_err;
    while (target + 1 < waypoints.size() &&
           (s.p - waypoints[target]).norm() < 0.5 * h.switch_radius)
      ++target;
    if (target + 1 == waypoints.size() && detail::arrived(s, waypoints.back(), h) && k > 0) {
      out.metrics.arrived = true;
      out.metrics.flight_time = t;
      detail::record(out, t, s, ref.p, quad::CtbrAction{}, static_cast<int>(target));
      break;
    }
    if (k >= max_steps) {
      detail::record(out, t, s, ref.p, quad::CtbrAction{}, static_cast<int>(target));
      break;
    }
    const env::Goal goal{waypoints[target], h.yaw};
    obs[0] = env::observe(s, goal, prev);
    policy(std::span<const env::Observation>(obs), std::span<env::NormalizedAction>(act));
    env::NormalizedAction u = act[0];
    for (double& x : u) x = std::clamp(x, -1.0, 1.0);
    const quad::CtbrAction a = env::to_ctbr(u, bounds);
    detail::record(out, t, s, ref.p, a, static_cast<int>(target));
    for (int i = 0; i < substeps; ++i) s = quad::integrate_step(s, a, h.physics_dt, vehicle, ctrl);
    prev = a;
  }
  out.metrics.rms_tracking_error = std::sqrt(err2 / n_err);
  return out;
}

// ----------------------------------------------------------------- output

inline void write_trace_csv(std::ostream& os, const std::vector<TraceRow>& trace) {
  os << "t,px,py,pz,vx,vy,vz,speed,ref_px,ref_py,ref_pz,thrust,wx_cmd,wy_cmd,wz_cmd,waypoint\n";
  char buf[512];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof buf,
                  "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n",
                  r.t, r.p.x(), r.p.y(), r.p.z(), r.v.x(), r.v.y(), r.v.z(), r.speed, r.ref_p.x(),
                  r.ref_p.y(), r.ref_p.z(), r.action.thrust, r.action.rates.x(), r.action.rates.y(),
                  r.action.rates.z(), r.waypoint);
    os << buf;
  }
}

inline std::string metrics_header() {
  return "waypoints,method,velocity_scale,planned_time_s,flight_time_s,arrived,max_speed_mps,rms_tracking_error_m";
}

inline std::string metrics_row(const FlightMetrics& m, double velocity_scale) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%s,%s,%.17g,%.17g,%.17g,%d,%.17g,%.17g", m.waypoints.c_str(),
                m.method.c_str(), velocity_scale, m.planned_duration, m.flight_time,
                m.arrived ? 1 : 0, m.max_speed, m.rms_tracking_error);
  return buf;
}

}  // namespace mintime::tracker
