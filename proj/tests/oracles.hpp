#pragma once

// Test-only reference computations. Nothing here calls into the library's
// implementation paths; each function recomputes its quantity from first
// principles so that the unit and acceptance suites have something
// independent to compare against.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace oracle {

// Exhaustive minimum-time search for one axis: scan the switch time on a
// uniform grid for both acceleration orderings, locate sign changes of the
// terminal position residual and interpolate. Returns +inf if nothing found.
inline double grid_min_time(double p0, double v0, double p2, double v2,
                            double a_min, double a_max, double step = 1e-4) {
  const double a_small = std::min(-a_min, a_max);
  const double dp = std::abs(p2 - p0);
  const double horizon = 2.0 * (std::abs(v0) + std::abs(v2)) / a_small +
                         2.0 * std::sqrt(2.0 * dp / a_small +
                                         (v0 * v0 + v2 * v2) / (a_small * a_small)) +
                         1.0;
  double best = std::numeric_limits<double>::infinity();
  const double signs[2][2] = {{a_max, a_min}, {a_min, a_max}};
  for (const auto& pat : signs) {
    const double a1 = pat[0];
    const double a2 = pat[1];
    auto eval = [&](double t1, double& t2) {
      const double v1 = v0 + a1 * t1;
      t2 = (v2 - v1) / a2;
      return p0 + v0 * t1 + 0.5 * a1 * t1 * t1 + v1 * t2 + 0.5 * a2 * t2 * t2 - p2;
    };
    const long n = static_cast<long>(horizon / step) + 1;
    double t2_prev = 0.0;
    double r_prev = eval(0.0, t2_prev);
    if (r_prev == 0.0 && t2_prev >= 0.0) best = std::min(best, t2_prev);
    for (long k = 1; k <= n; ++k) {
      const double t1 = k * step;
      double t2 = 0.0;
      const double r = eval(t1, t2);
      if ((r_prev < 0.0) != (r < 0.0) || r == 0.0) {
        const double denom = r - r_prev;
        const double frac = denom == 0.0 ? 1.0 : -r_prev / denom;
        const double ts = (k - 1 + frac) * step;
        const double t2s = (v2 - (v0 + a1 * ts)) / a2;
        if (t2s >= -1e-6) best = std::min(best, ts + std::max(t2s, 0.0));
      }
      r_prev = r;
      t2_prev = t2;
    }
  }
  return best;
}

// Composite Simpson rule; exact for polynomials up to degree three.
inline double simpson(const std::function<double(double)>& f, double a,
                      double b, int n = 200) {
  if (b <= a) return 0.0;
  if (n % 2) ++n;
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

}  // namespace oracle

namespace oracle {

// Shaped reward terms recomputed from plain arrays (penalty terms negated,
// alignment form of the stay term).
struct RewardTerms {
  double goal, heading, stay, accel, rate, thrust_smooth, rate_cmd_smooth, pmm;
};

inline double norm3(const double* a) { return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]); }

inline RewardTerms reward_terms(const double p[3], const double p_prev[3], const double v[3],
                                const double v_prev[3], const double w[3], double yaw,
                                double goal_yaw, const double act[4], const double act_prev[4],
                                const double goal[3], const double ref_p[3], const double ref_v[3],
                                double dt, double G) {
  const double pi = 3.14159265358979323846;
  RewardTerms r{};
  double d[3], s[3], g[3], a[3], dpr[3], dvr[3];
  for (int i = 0; i < 3; ++i) {
    d[i] = p[i] - goal[i];
    s[i] = p[i] - p_prev[i];
    g[i] = goal[i] - p_prev[i];
    a[i] = (v[i] - v_prev[i]) / dt;
    dpr[i] = p[i] - ref_p[i];
    dvr[i] = v[i] - ref_v[i];
  }
  r.goal = 0.2 * (1.0 - norm3(d) / G);
  double dyaw = yaw - goal_yaw;
  while (dyaw > pi) dyaw -= 2 * pi;
  while (dyaw < -pi) dyaw += 2 * pi;
  r.heading = -1.0 * std::abs(dyaw);
  const double ns = norm3(s), ng = norm3(g);
  r.stay = (ns < 1e-9 || ng < 1e-9) ? 0.0 : 0.2 * (s[0] * g[0] + s[1] * g[1] + s[2] * g[2]) / (ns * ng);
  r.accel = -0.15 * norm3(a);
  r.rate = -0.25 * norm3(w);
  r.thrust_smooth = -0.4 * std::abs(act[0] - act_prev[0]);
  r.rate_cmd_smooth = -0.35 * (std::abs(act[1] - act_prev[1]) + std::abs(act[2] - act_prev[2]) +
                               std::abs(act[3] - act_prev[3]));
  r.pmm = -3.0 * norm3(dpr) - 0.3 * norm3(dvr);
  return r;
}

}  // namespace oracle
