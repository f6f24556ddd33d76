#pragma once

// Point-mass minimum-time planning. Each axis is an independent double
// integrator with box-bounded acceleration; the minimum-time profile is
// bang-bang with at most one switch. Multi-axis plans are synchronized by
// slowing the faster axes down to the slowest axis' duration.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mintime/types.hpp"

namespace mintime::pmm {

struct AxisBoundary {
  double p0 = 0.0;
  double v0 = 0.0;
  double p2 = 0.0;
  double v2 = 0.0;
};

struct AxisLimits {
  double a_min = -1.0;
  double a_max = 1.0;

  bool valid() const {
    return std::isfinite(a_min) && std::isfinite(a_max) && a_min < 0.0 &&
           a_max > 0.0;
  }
};

// Two constant-acceleration segments: a1 for t1 seconds, then a2 for t2.
struct AxisSolution {
  double a1 = 0.0;
  double a2 = 0.0;
  double t1 = 0.0;
  double t2 = 0.0;

  double duration() const { return t1 + t2; }
};

// Position and velocity at the switch time.
inline double switch_position(const AxisBoundary& b, const AxisSolution& s) {
  return b.p0 + b.v0 * s.t1 + 0.5 * s.a1 * s.t1 * s.t1;
}
inline double switch_velocity(const AxisBoundary& b, const AxisSolution& s) {
  return b.v0 + s.a1 * s.t1;
}

struct AxisState {
  double p = 0.0;
  double v = 0.0;
  double a = 0.0;
};

// Exact piecewise evaluation. t beyond the profile end holds the final
// position and velocity with zero acceleration.
inline AxisState evaluate_axis(const AxisBoundary& b, const AxisSolution& s,
                               double t) {
  t = std::max(t, 0.0);
  if (t <= s.t1) {
    return {b.p0 + b.v0 * t + 0.5 * s.a1 * t * t, b.v0 + s.a1 * t, s.a1};
  }
  const double p1 = switch_position(b, s);
  const double v1 = switch_velocity(b, s);
  const double tau = std::min(t - s.t1, s.t2);
  const double p = p1 + v1 * tau + 0.5 * s.a2 * tau * tau;
  const double v = v1 + s.a2 * tau;
  if (t - s.t1 <= s.t2) return {p, v, s.a2};
  return {p, v, 0.0};
}

class InfeasibleError : public std::runtime_error {
 public:
  InfeasibleError(const std::string& what, AxisBoundary boundary,
                  AxisLimits limits, double requested_duration)
      : std::runtime_error(what + " " + describe(boundary, limits,
                                                 requested_duration)),
        boundary_(boundary),
        limits_(limits),
        requested_duration_(requested_duration) {}

  const AxisBoundary& boundary() const { return boundary_; }
  const AxisLimits& limits() const { return limits_; }
  double requested_duration() const { return requested_duration_; }

 private:
  static std::string describe(const AxisBoundary& b, const AxisLimits& l,
                              double t) {
    std::ostringstream os;
    os.precision(17);
    os << "[p0=" << b.p0 << " v0=" << b.v0 << " p2=" << b.p2
       << " v2=" << b.v2 << " a_min=" << l.a_min << " a_max=" << l.a_max;
    if (std::isfinite(t)) os << " T=" << t;
    os << "]";
    return os.str();
  }

  AxisBoundary boundary_;
  AxisLimits limits_;
  double requested_duration_;
};

namespace detail {

inline double time_tolerance(const AxisBoundary& b, const AxisLimits& l) {
  const double scale = 1.0 + std::abs(b.v0) + std::abs(b.v2) +
                       std::abs(b.p2 - b.p0) +
                       std::max(std::abs(l.a_min), std::abs(l.a_max));
  return 1e-12 * scale;
}

inline void check_inputs(const AxisBoundary& b, const AxisLimits& l) {
  if (!l.valid()) {
    throw std::invalid_argument("pmm: acceleration limits must satisfy a_min < 0 < a_max");
  }
  if (!std::isfinite(b.p0) || !std::isfinite(b.v0) || !std::isfinite(b.p2) ||
      !std::isfinite(b.v2)) {
    throw InfeasibleError("pmm: non-finite boundary state", b, l,
                          std::numeric_limits<double>::quiet_NaN());
  }
}

}  // namespace detail

// All admissible bang-bang solutions: for each ordering of the two limit
// accelerations the switch velocity solves a quadratic, giving up to four
// candidates. Only real solutions with non-negative segment times are kept.
inline std::vector<AxisSolution> bang_bang_candidates(const AxisBoundary& b,
                                                      const AxisLimits& lim) {
  detail::check_inputs(b, lim);
  const double tol = detail::time_tolerance(b, lim);
  const double dp = b.p2 - b.p0;
  std::vector<AxisSolution> out;
  for (const auto& [a1, a2] : {std::pair{lim.a_max, lim.a_min},
                               std::pair{lim.a_min, lim.a_max}}) {
    // v1^2 (a2 - a1) = 2 a1 a2 dp + a2 v0^2 - a1 v2^2
    double v1_sq = (2.0 * a1 * a2 * dp + a2 * b.v0 * b.v0 - a1 * b.v2 * b.v2) /
                   (a2 - a1);
    const double sq_scale = 1.0 + b.v0 * b.v0 + b.v2 * b.v2;
    if (v1_sq < 0.0) {
      if (v1_sq < -1e-12 * sq_scale) continue;
      v1_sq = 0.0;
    }
    const double root = std::sqrt(v1_sq);
    for (double v1 : {root, -root}) {
      double t1 = (v1 - b.v0) / a1;
      double t2 = (b.v2 - v1) / a2;
      if (t1 < -tol || t2 < -tol) continue;
      out.push_back({a1, a2, std::max(t1, 0.0), std::max(t2, 0.0)});
      if (root == 0.0) break;
    }
  }
  return out;
}

// Minimum-time two-segment bang-bang profile for one axis. Ties in total
// duration resolve to the candidate that starts with a_max.
inline AxisSolution solve_axis(const AxisBoundary& b, const AxisLimits& lim) {
  const auto candidates = bang_bang_candidates(b, lim);
  if (candidates.empty()) {
    throw InfeasibleError("pmm: no admissible bang-bang solution", b, lim,
                          std::numeric_limits<double>::quiet_NaN());
  }
  const AxisSolution* best = nullptr;
  for (const auto& c : candidates) {
    if (best == nullptr || c.duration() < best->duration() ||
        (c.duration() == best->duration() && c.a1 == lim.a_max &&
         best->a1 != lim.a_max)) {
      best = &c;
    }
  }
  return *best;
}

// Same boundary conditions met in exactly `duration` seconds. Keeps the
// bang-bang sign pattern and scales both accelerations by a common factor
// lambda in [0, 1]. Some boundary pairs with nonzero end velocities have a
// window of durations above the minimum that no such profile reaches; those
// are reported as Infeasible as well.
inline AxisSolution stretch_axis(const AxisBoundary& b, const AxisLimits& lim,
                                 double duration) {
  const AxisSolution fastest = solve_axis(b, lim);
  const double t_min = fastest.duration();
  const double tol = detail::time_tolerance(b, lim) * (1.0 + duration);
  if (!(duration >= t_min - tol)) {
    throw InfeasibleError("pmm: requested duration below axis minimum", b, lim,
                          duration);
  }
  if (std::abs(duration - t_min) <= tol) return fastest;

  const double T = duration;
  const double V = b.v2 - b.v0;
  const double P = (b.p2 - b.p0) - b.v0 * T;
  const double len_scale = 1.0 + std::abs(P) + std::abs(V * T);

  if (std::abs(V) * T <= 1e-14 * len_scale && std::abs(P) <= 1e-14 * len_scale) {
    return {0.0, 0.0, T, 0.0};
  }

  std::optional<AxisSolution> best;
  double best_lambda = std::numeric_limits<double>::infinity();
  for (const auto& [A1, A2] : {std::pair{lim.a_max, lim.a_min},
                               std::pair{lim.a_min, lim.a_max}}) {
    const double D = A1 - A2;
    // Eliminating lambda from the velocity and position conditions leaves a
    // quadratic in the switch time u (second segment lasts T - u).
    const double qa = 0.5 * V * D;
    const double qb = D * (P - V * T);
    const double qc = A2 * T * (P - 0.5 * V * T);
    std::array<double, 2> roots{};
    int n_roots = 0;
    if (std::abs(qa) * T * T <= 1e-15 * (std::abs(qb) * T + std::abs(qc))) {
      if (qb != 0.0) roots[n_roots++] = -qc / qb;
    } else {
      double disc = qb * qb - 4.0 * qa * qc;
      if (disc < 0.0) {
        if (disc < -1e-12 * (qb * qb + std::abs(4.0 * qa * qc))) continue;
        disc = 0.0;
      }
      const double sq = std::sqrt(disc);
      // Numerically stable pair of roots.
      const double q = -0.5 * (qb + std::copysign(sq, qb));
      if (q != 0.0) {
        roots[n_roots++] = q / qa;
        roots[n_roots++] = qc / q;
      } else {
        roots[n_roots++] = 0.0;
      }
    }
    for (int i = 0; i < n_roots; ++i) {
      double u = roots[i];
      if (!std::isfinite(u) || u < -tol || u > T + tol) continue;
      u = std::clamp(u, 0.0, T);
      const double w = T - u;
      // Both conditions are linear in lambda; the velocity row is scaled by
      // T so the two residuals share units.
      const double alpha = (A1 * u + A2 * w) * T;
      const double beta = 0.5 * A1 * u * u + A1 * u * w + 0.5 * A2 * w * w;
      const double denom = alpha * alpha + beta * beta;
      if (denom == 0.0) continue;
      double lambda = (alpha * V * T + beta * P) / denom;
      if (lambda < -1e-12 || lambda > 1.0 + 1e-9) continue;
      lambda = std::clamp(lambda, 0.0, 1.0);
      const double residual = std::max(std::abs(lambda * alpha - V * T),
                                       std::abs(lambda * beta - P));
      if (residual > 1e-9 * len_scale) continue;
      if (lambda < best_lambda) {
        best_lambda = lambda;
        best = AxisSolution{lambda * A1, lambda * A2, u, w};
      }
    }
  }
  if (!best) {
    throw InfeasibleError(
        "pmm: requested duration falls in an unreachable window", b, lim,
        duration);
  }
  return *best;
}

// Per-axis limits for x, y, z.
struct Limits {
  std::array<AxisLimits, 3> axis{AxisLimits{-0.8 * kGravity, 0.8 * kGravity},
                                 AxisLimits{-0.8 * kGravity, 0.8 * kGravity},
                                 AxisLimits{-0.6 * kGravity, 1.2 * kGravity}};

  Limits scaled(double factor) const {
    Limits out = *this;
    for (auto& a : out.axis) {
      a.a_min *= factor;
      a.a_max *= factor;
    }
    return out;
  }
};

struct Sample {
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Vec3 a = Vec3::Zero();
};

class Trajectory {
 public:
  Trajectory() = default;
  Trajectory(std::array<AxisBoundary, 3> boundary,
             std::array<AxisSolution, 3> solution, double duration)
      : boundary_(boundary), solution_(solution), duration_(duration) {}

  double duration() const { return duration_; }
  const AxisBoundary& boundary(int axis) const { return boundary_[axis]; }
  const AxisSolution& solution(int axis) const { return solution_[axis]; }

  Vec3 start_position() const {
    return {boundary_[0].p0, boundary_[1].p0, boundary_[2].p0};
  }
  Vec3 goal_position() const {
    return {boundary_[0].p2, boundary_[1].p2, boundary_[2].p2};
  }
  Vec3 goal_velocity() const {
    return {boundary_[0].v2, boundary_[1].v2, boundary_[2].v2};
  }

  // Reference at time t. Past the end the reference holds the goal state.
  Sample sample(double t) const {
    Sample s;
    if (t >= duration_) {
      s.p = goal_position();
      s.v = goal_velocity();
      return s;
    }
    for (int i = 0; i < 3; ++i) {
      const AxisState a = evaluate_axis(boundary_[i], solution_[i], t);
      s.p[i] = a.p;
      s.v[i] = a.v;
      s.a[i] = a.a;
    }
    return s;
  }

 private:
  std::array<AxisBoundary, 3> boundary_{};
  std::array<AxisSolution, 3> solution_{};
  double duration_ = 0.0;
};

// Minimum-time synchronized plan between two position/velocity states.
// The common duration is the slowest axis' minimum; if some axis cannot be
// stretched to it, the next admissible bang-bang duration is tried.
inline Trajectory plan_state_to_state(const Vec3& p_start, const Vec3& v_start,
                                      const Vec3& p_goal, const Vec3& v_goal,
                                      const Limits& limits) {
  std::array<AxisBoundary, 3> boundary;
  std::vector<double> durations;
  double t_sync = 0.0;
  for (int i = 0; i < 3; ++i) {
    boundary[i] = {p_start[i], v_start[i], p_goal[i], v_goal[i]};
    const AxisSolution fastest = solve_axis(boundary[i], limits.axis[i]);
    t_sync = std::max(t_sync, fastest.duration());
    for (const auto& c : bang_bang_candidates(boundary[i], limits.axis[i])) {
      durations.push_back(c.duration());
    }
  }
  std::sort(durations.begin(), durations.end());

  auto try_duration = [&](double T) -> std::optional<std::array<AxisSolution, 3>> {
    std::array<AxisSolution, 3> sol;
    for (int i = 0; i < 3; ++i) {
      try {
        sol[i] = stretch_axis(boundary[i], limits.axis[i], T);
      } catch (const InfeasibleError&) {
        return std::nullopt;
      }
    }
    return sol;
  };

  if (auto sol = try_duration(t_sync)) return {boundary, *sol, t_sync};
  for (double T : durations) {
    if (T <= t_sync) continue;
    if (auto sol = try_duration(T)) return {boundary, *sol, T};
  }
  throw InfeasibleError("pmm: no common duration for all axes", boundary[0],
                        limits.axis[0], t_sync);
}

// Rest-to-rest segments through consecutive waypoints.
inline std::vector<Trajectory> plan_waypoints(const std::vector<Vec3>& points,
                                              const Limits& limits) {
  if (points.size() < 2) {
    throw std::invalid_argument("pmm: at least two waypoints are required");
  }
  std::vector<Trajectory> segments;
  segments.reserve(points.size() - 1);
  for (std::size_t i = 0; i + 1 < points.size(); ++i) {
    segments.push_back(plan_state_to_state(points[i], Vec3::Zero(),
                                           points[i + 1], Vec3::Zero(), limits));
  }
  return segments;
}

inline double total_duration(const std::vector<Trajectory>& segments) {
  double t = 0.0;
  for (const auto& s : segments) t += s.duration();
  return t;
}

// Samples a chained plan at global time t.
inline Sample sample_sequence(const std::vector<Trajectory>& segments,
                              double t) {
  double start = 0.0;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const double end = start + segments[i].duration();
    if (t < end || i + 1 == segments.size()) {
      return segments[i].sample(t - start);
    }
    start = end;
  }
  return {};
}

}  // namespace mintime::pmm
