#pragma once

// Rigid-body quadrotor with first-order rotor lag. Rotor layout and torque
// signs:
//   tau_x = l/sqrt(2) ( f1 - f2 - f3 + f4)
//   tau_y = l/sqrt(2) (-f1 - f2 + f3 + f4)
//   tau_z = kappa     ( f1 - f2 + f3 - f4)

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "mintime/types.hpp"

namespace mintime::quad {

struct QuadParams {
  double mass = 1.2;
  Vec3 inertia{0.01, 0.01, 0.017};
  double arm_length = 0.15 * std::numbers::sqrt2;
  double torque_constant = 0.016;
  double rotor_speed_max = 1000.0;
  // Hover at half of rotor_speed_max for the default mass.
  double thrust_coeff = 1.2 * kGravity / (4.0 * 500.0 * 500.0);
  double motor_time_constant = 0.05;
  Vec3 drag = Vec3::Zero();
  Vec3 gravity{0.0, 0.0, -kGravity};

  void validate() const {
    if (!(mass > 0.0)) throw std::invalid_argument("quad: mass must be positive");
    if (!(inertia.minCoeff() > 0.0))
      throw std::invalid_argument("quad: inertia entries must be positive");
    if (!(thrust_coeff > 0.0))
      throw std::invalid_argument("quad: thrust coefficient must be positive");
    if (!(motor_time_constant > 0.0))
      throw std::invalid_argument("quad: motor time constant must be positive");
    if (!(arm_length > 0.0) || !(torque_constant > 0.0))
      throw std::invalid_argument("quad: arm length and torque constant must be positive");
    if (!(rotor_speed_max > 0.0))
      throw std::invalid_argument("quad: rotor speed cap must be positive");
  }

  double max_motor_thrust() const {
    return thrust_coeff * rotor_speed_max * rotor_speed_max;
  }
  double hover_rotor_speed() const {
    return std::sqrt(mass * gravity.norm() / (4.0 * thrust_coeff));
  }
};

struct QuadState {
  Vec3 p = Vec3::Zero();
  Quat q = Quat::Identity();
  Vec3 v = Vec3::Zero();
  Vec3 w = Vec3::Zero();
  Vec4 rotor = Vec4::Zero();

  static QuadState hover_at(const Vec3& position, const QuadParams& params,
                            double yaw = 0.0) {
    QuadState s;
    s.p = position;
    s.q = Quat(Eigen::AngleAxisd(yaw, Vec3::UnitZ()));
    s.rotor.setConstant(params.hover_rotor_speed());
    return s;
  }

  bool finite() const {
    return p.allFinite() && q.coeffs().allFinite() && v.allFinite() &&
           w.allFinite() && rotor.allFinite();
  }
};

// Mass-normalized collective thrust (m/s^2) and body-rate setpoint (rad/s).
struct CtbrAction {
  double thrust = 0.0;
  Vec3 rates = Vec3::Zero();
};

struct ActionBounds {
  double thrust_min = 0.0;
  double thrust_max = 2.0 * kGravity;
  double rate_max = 6.0;

  CtbrAction clamp(const CtbrAction& a) const {
    CtbrAction out;
    out.thrust = std::clamp(a.thrust, thrust_min, thrust_max);
    out.rates = a.rates.cwiseMax(-rate_max).cwiseMin(rate_max);
    return out;
  }
};

class NumericalDivergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline Vec4 motor_thrusts(const Vec4& rotor_speed, double thrust_coeff) {
  return thrust_coeff * rotor_speed.cwiseProduct(rotor_speed);
}

inline Vec3 body_torque(const Vec4& f, double arm_length, double torque_constant) {
  const double r = arm_length / std::numbers::sqrt2;
  return {r * (f[0] - f[1] - f[2] + f[3]), r * (-f[0] - f[1] + f[2] + f[3]),
          torque_constant * (f[0] - f[1] + f[2] - f[3])};
}

// Exact solution of Omega' = (Omega_c - Omega) / k over dt, then capped.
inline Vec4 motor_step(const Vec4& rotor, const Vec4& command, double dt,
                       double time_constant, double rotor_speed_max) {
  const double decay = std::exp(-dt / time_constant);
  const Vec4 next = command + (rotor - command) * decay;
  return next.cwiseMax(0.0).cwiseMin(rotor_speed_max);
}

struct StateDerivative {
  Vec3 p_dot = Vec3::Zero();
  Vec4 q_dot = Vec4::Zero();  // (w, x, y, z)
  Vec3 v_dot = Vec3::Zero();
  Vec3 w_dot = Vec3::Zero();
};

inline Vec4 quat_wxyz(const Quat& q) { return {q.w(), q.x(), q.y(), q.z()}; }
inline Quat quat_from_wxyz(const Vec4& c) { return Quat(c[0], c[1], c[2], c[3]); }

// Rigid-body time derivative for the given individual motor thrusts.
inline StateDerivative derivative(const QuadState& s, const Vec4& f,
                                  const QuadParams& params) {
  StateDerivative d;
  d.p_dot = s.v;
  // 0.5 * q (x) [0, w]
  const double qw = s.q.w(), qx = s.q.x(), qy = s.q.y(), qz = s.q.z();
  const double wx = s.w.x(), wy = s.w.y(), wz = s.w.z();
  d.q_dot = 0.5 * Vec4(-qx * wx - qy * wy - qz * wz, qw * wx + qy * wz - qz * wy,
                       qw * wy - qx * wz + qz * wx, qw * wz + qx * wy - qy * wx);
  const Mat3 R = s.q.toRotationMatrix();
  const Vec3 thrust(0.0, 0.0, f.sum());
  const Vec3 drag = -params.drag.cwiseProduct(R.transpose() * s.v);
  d.v_dot = R * (thrust + drag) / params.mass + params.gravity;
  const Vec3 tau = body_torque(f, params.arm_length, params.torque_constant);
  const Vec3 Jw = params.inertia.cwiseProduct(s.w);
  d.w_dot = (tau - s.w.cross(Jw)).cwiseQuotient(params.inertia);
  return d;
}

namespace detail {
inline QuadState advance(const QuadState& s, const StateDerivative& d, double h) {
  QuadState out = s;
  out.p += h * d.p_dot;
  out.q = quat_from_wxyz(quat_wxyz(s.q) + h * d.q_dot);
  out.v += h * d.v_dot;
  out.w += h * d.w_dot;
  return out;
}
}  // namespace detail

// One RK4 step of the rigid body with motor thrusts held constant. Rotor
// speeds are left untouched; the quaternion is renormalized.
inline QuadState rigid_body_rk4(const QuadState& s, const Vec4& f, double dt,
                                const QuadParams& params) {
  const StateDerivative k1 = derivative(s, f, params);
  const StateDerivative k2 = derivative(detail::advance(s, k1, 0.5 * dt), f, params);
  const StateDerivative k3 = derivative(detail::advance(s, k2, 0.5 * dt), f, params);
  const StateDerivative k4 = derivative(detail::advance(s, k3, dt), f, params);
  QuadState out = s;
  const double c = dt / 6.0;
  out.p += c * (k1.p_dot + 2.0 * k2.p_dot + 2.0 * k3.p_dot + k4.p_dot);
  out.v += c * (k1.v_dot + 2.0 * k2.v_dot + 2.0 * k3.v_dot + k4.v_dot);
  out.w += c * (k1.w_dot + 2.0 * k2.w_dot + 2.0 * k3.w_dot + k4.w_dot);
  Vec4 q = quat_wxyz(s.q) + c * (k1.q_dot + 2.0 * k2.q_dot + 2.0 * k3.q_dot + k4.q_dot);
  out.q = quat_from_wxyz(q.normalized());
  return out;
}

// Proportional body-rate loop. Gains are torque per rad/s of rate error.
struct RateController {
  Vec3 gain = Vec3(8.0, 8.0, 3.0).cwiseProduct(QuadParams{}.inertia);

  static RateController for_inertia(const Vec3& inertia,
                                    const Vec3& bandwidth = Vec3(8.0, 8.0, 3.0)) {
    return {bandwidth.cwiseProduct(inertia)};
  }

  Vec3 torque(const Vec3& rate_cmd, const Vec3& rate) const {
    return gain.cwiseProduct(rate_cmd - rate);
  }
};

struct Allocation {
  Vec4 thrust = Vec4::Zero();
  Vec4 rotor_cmd = Vec4::Zero();
  bool saturated = false;
};

// Inverse of the collective/torque map, with per-motor clamping.
class Mixer {
 public:
  Mixer() : Mixer(QuadParams{}) {}
  explicit Mixer(const QuadParams& p)
      : arm_(p.arm_length / std::numbers::sqrt2),
        kappa_(p.torque_constant),
        thrust_coeff_(p.thrust_coeff),
        thrust_max_(p.max_motor_thrust()) {}

  // (collective N, torque) for the given motor thrusts.
  std::pair<double, Vec3> forward(const Vec4& f) const {
    return {f.sum(), body_torque(f, arm_ * std::numbers::sqrt2, kappa_)};
  }

  Allocation allocate(double collective, const Vec3& torque) const {
    // The mixing matrix is diag(1, r, r, kappa) * H with H H^T = 4 I.
    const double c = collective;
    const double x = torque.x() / arm_;
    const double y = torque.y() / arm_;
    const double z = torque.z() / kappa_;
    Vec4 f(c + x - y + z, c - x - y - z, c - x + y + z, c + x + y - z);
    f *= 0.25;
    Allocation out;
    out.saturated = (f.array() < 0.0).any() || (f.array() > thrust_max_).any();
    out.thrust = f.cwiseMax(0.0).cwiseMin(thrust_max_);
    out.rotor_cmd = (out.thrust / thrust_coeff_).cwiseSqrt();
    return out;
  }

 private:
  double arm_;
  double kappa_;
  double thrust_coeff_;
  double thrust_max_;
};

// Onboard low-level control: converts CTBR into rotor commands using the
// nominal vehicle model it was built for, independent of the simulated
// plant's (possibly perturbed) parameters.
struct LowLevelController {
  double nominal_mass = QuadParams{}.mass;
  RateController rate;
  Mixer mixer;

  static LowLevelController for_params(const QuadParams& nominal) {
    return {nominal.mass, RateController::for_inertia(nominal.inertia), Mixer(nominal)};
  }

  Allocation command(const CtbrAction& a, const QuadState& s) const {
    return mixer.allocate(nominal_mass * a.thrust, rate.torque(a.rates, s.w));
  }
};

struct SubstepInfo {
  bool saturated = false;
};

// One physics substep: rate loop and allocation at the substep rate, RK4 on
// the rigid body with thrusts from the current rotor speeds, exact rotor lag.
inline QuadState integrate_step(const QuadState& s, const CtbrAction& action,
                                double dt, const QuadParams& plant,
                                const LowLevelController& ctrl,
                                SubstepInfo* info = nullptr) {
  const Allocation alloc = ctrl.command(action, s);
  const Vec4 f = motor_thrusts(s.rotor, plant.thrust_coeff);
  QuadState next = rigid_body_rk4(s, f, dt, plant);
  next.rotor = motor_step(s.rotor, alloc.rotor_cmd, dt, plant.motor_time_constant,
                          plant.rotor_speed_max);
  if (info) info->saturated = alloc.saturated;
  if (!next.finite()) {
    throw NumericalDivergence("quad: non-finite state after integration step");
  }
  return next;
}

}  // namespace mintime::quad
