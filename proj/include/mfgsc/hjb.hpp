#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "mfgsc/errors.hpp"
#include "mfgsc/grid.hpp"
#include "mfgsc/measure.hpp"
#include "mfgsc/model.hpp"
#include "mfgsc/tridiagonal.hpp"

namespace mfgsc {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct HamiltonianMin {
  double h_value;
  double control;
};

/// min{(p + g1) theta, (-p + g2) theta, 0} and the bang-bang control that
/// attains it (+theta on p <= -g1, -theta on p >= g2, 0 otherwise).
inline HamiltonianMin hamiltonian_min(double p, double gamma1, double gamma2,
                                      double theta) {
  const double up = p * theta + gamma1 * theta;
  const double down = -p * theta + gamma2 * theta;
  const double h = std::min({up, down, 0.0});
  double u = 0.0;
  if (p <= -gamma1) {
    u = theta;
  } else if (p >= gamma2) {
    u = -theta;
  }
  return {h, u};
}

/// Unit-rate control cost gamma1 u+ + gamma2 u-.
inline double control_cost(double u, double gamma1, double gamma2) {
  return u > 0.0 ? gamma1 * u : (u < 0.0 ? -gamma2 * u : 0.0);
}

/// b(x, mu_t) and f(x, mu_t) at every node of every time slice.
struct FlowCoefficients {
  SpaceTimeGrid grid;
  std::vector<std::vector<double>> drift;
  std::vector<std::vector<double>> cost;

  double max_abs_drift() const {
    double m = 0.0;
    for (const auto& row : drift) {
      for (double b : row) m = std::max(m, std::abs(b));
    }
    return m;
  }
};

inline FlowCoefficients flow_coefficients(const CoefficientTable& table,
                                          const GridMeasureFlow& flow) {
  FlowCoefficients out{flow.grid, {}, {}};
  out.drift.reserve(flow.size());
  out.cost.reserve(flow.size());
  for (const auto& mu : flow.measures) {
    out.drift.push_back(table.drift(mu));
    out.cost.push_back(table.cost(mu));
  }
  return out;
}

inline FlowCoefficients flow_coefficients(const ModelSpec& model,
                                          const GridMeasureFlow& flow) {
  return flow_coefficients(CoefficientTable(model, flow.grid.space), flow);
}

/// v(t_k, x_j) on the grid with its discrete spatial derivatives.
struct ValueField {
  SpaceTimeGrid grid;
  std::vector<std::vector<double>> v;
  std::vector<std::vector<double>> dv_dx;

  ValueField() = default;
  ValueField(SpaceTimeGrid g, std::vector<std::vector<double>> values)
      : grid(g), v(std::move(values)) {
    require(v.size() == grid.nt, "ValueField: slice count != nt", ErrorKind::GridMismatch);
    for (const auto& row : v) {
      require(row.size() == grid.nx(), "ValueField: row size != nx",
              ErrorKind::GridMismatch);
    }
    dv_dx.resize(grid.nt);
    for (std::size_t k = 0; k < grid.nt; ++k) dv_dx[k] = derivative(v[k], grid.dx());
  }

  /// Central differences inside, one-sided at the two ends.
  static std::vector<double> derivative(const std::vector<double>& row, double dx) {
    const std::size_t n = row.size();
    std::vector<double> d(n);
    d[0] = (row[1] - row[0]) / dx;
    d[n - 1] = (row[n - 1] - row[n - 2]) / dx;
    for (std::size_t j = 1; j + 1 < n; ++j) d[j] = (row[j + 1] - row[j - 1]) / (2.0 * dx);
    return d;
  }

  /// Second difference; zero on the boundary rows by construction.
  double d2v_dx2(std::size_t k, std::size_t j) const {
    if (j == 0 || j + 1 >= grid.nx()) return 0.0;
    const double h = grid.dx();
    return (v[k][j - 1] - 2.0 * v[k][j] + v[k][j + 1]) / (h * h);
  }

  /// Bilinear interpolation, clamped to the grid.
  double at(double t, double x) const {
    const auto [k, lt] = bracket(t, grid.t_start, grid.dt(), grid.nt);
    const auto [j, lx] = bracket(x, grid.space.x_min, grid.dx(), grid.nx());
    auto row = [&](std::size_t kk) {
      return (1.0 - lx) * v[kk][j] + lx * v[kk][j + 1];
    };
    return (1.0 - lt) * row(k) + lt * row(k + 1);
  }

  static std::pair<std::size_t, double> bracket(double z, double z0, double h,
                                                std::size_t n) {
    const double pos = std::clamp((z - z0) / h, 0.0, static_cast<double>(n - 1));
    auto i = static_cast<std::size_t>(pos);
    if (i >= n - 1) i = n - 2;
    return {i, pos - static_cast<double>(i)};
  }
};

/// Backward IMEX sweep against tabulated coefficients.
///
/// Explicit part: upwind transport with the control chosen node by node over
/// {-theta, 0, theta} plus u = -b when |b| <= theta (the kink in u of the
/// upwinded Hamiltonian). Implicit part: diffusion, with identity rows at the
/// two boundary nodes.
inline ValueField solve_hjb(const ModelSpec& model, const FlowCoefficients& coeffs) {
  const auto& grid = coeffs.grid;
  const std::size_t nx = grid.nx();
  const std::size_t nt = grid.nt;
  require(coeffs.drift.size() == nt && coeffs.cost.size() == nt,
          "solve_hjb: coefficient table does not match the grid", ErrorKind::GridMismatch);
  model.check_cfl(grid);
  const double dx = grid.dx();
  const double dt = grid.dt();
  const double theta = model.theta();
  const double g1 = model.gamma1();
  const double g2 = model.gamma2();
  const double alpha = dt * model.sigma() * model.sigma() / (2.0 * dx * dx);

  std::vector<double> lower(nx, -alpha);
  std::vector<double> diag(nx, 1.0 + 2.0 * alpha);
  std::vector<double> upper(nx, -alpha);
  lower[0] = upper[0] = 0.0;
  diag[0] = 1.0;
  lower[nx - 1] = upper[nx - 1] = 0.0;
  diag[nx - 1] = 1.0;
  const TridiagonalSolver implicit(std::move(lower), std::move(diag), std::move(upper));

  const double c_up = control_cost(theta, g1, g2);
  const double c_down = control_cost(-theta, g1, g2);

  std::vector<std::vector<double>> v(nt, std::vector<double>(nx, 0.0));
  std::vector<double> rhs(nx);
  for (std::size_t k = nt - 1; k-- > 0;) {
    const auto& next = v[k + 1];
    const auto& b = coeffs.drift[k + 1];
    const auto& f = coeffs.cost[k + 1];
    for (std::size_t j = 0; j < nx; ++j) {
      const double dp = (j + 1 < nx) ? (next[j + 1] - next[j]) / dx
                                     : (next[j] - next[j - 1]) / dx;
      const double dm = (j > 0) ? (next[j] - next[j - 1]) / dx : dp;
      auto transport = [&](double w) { return w > 0.0 ? w * dp : w * dm; };
      double g = std::min({transport(b[j] + theta) + c_up, transport(b[j]),
                           transport(b[j] - theta) + c_down});
      if (std::abs(b[j]) <= theta) g = std::min(g, control_cost(-b[j], g1, g2));
      rhs[j] = next[j] + dt * (g + f[j]);
    }
    implicit.solve(rhs);
    for (std::size_t j = 0; j < nx; ++j) {
      if (!std::isfinite(rhs[j])) {
        throw Error(ErrorKind::NonFinite,
                    "solve_hjb: non-finite value at time index " + std::to_string(k));
      }
    }
    v[k] = rhs;
  }
  return ValueField(grid, std::move(v));
}

inline void require_model_grid(const ModelSpec& model, const SpaceTimeGrid& grid) {
  require(std::abs(grid.t_start - model.start_time()) <= 1e-12 &&
              std::abs(grid.t_end - model.horizon()) <= 1e-12,
          "grid time window does not match the model's [s, T]", ErrorKind::GridMismatch);
}

inline ValueField solve_hjb(const ModelSpec& model, const GridMeasureFlow& flow) {
  require_model_grid(model, flow.grid);
  model.check_cfl(flow.grid);
  return solve_hjb(model, flow_coefficients(model, flow));
}

/// Bang-bang feedback: +theta for x <= a(t), -theta for x >= b(t), else 0.
/// Infinite boundaries encode empty (or full) regions.
struct ThresholdPolicy {
  SpaceTimeGrid grid;
  std::vector<double> lower_boundary;
  std::vector<double> upper_boundary;
  double theta = 0.0;
  double dvdx_violation = 0.0;  // largest decrease found in dv_dx

  /// Boundaries at an arbitrary time, linear in t between nodes. When a
  /// bracketing value is infinite the nearest node is used instead.
  std::pair<double, double> boundaries(double t) const {
    const auto [k, lam] = ValueField::bracket(t, grid.t_start, grid.dt(), grid.nt);
    auto interp = [&, k = k, lam = lam](const std::vector<double>& c) {
      const double lo = c[k];
      const double hi = c[k + 1];
      if (!std::isfinite(lo) || !std::isfinite(hi)) return lam < 0.5 ? lo : hi;
      return (1.0 - lam) * lo + lam * hi;
    };
    return {interp(lower_boundary), interp(upper_boundary)};
  }

  static double threshold_control(double x, double a, double b, double theta) {
    if (x <= a) return theta;
    if (x >= b) return -theta;
    return 0.0;
  }

  double control(double t, double x) const {
    const auto [a, b] = boundaries(t);
    return threshold_control(x, a, b, theta);
  }

  double control_at_node(std::size_t k, double x) const {
    return threshold_control(x, lower_boundary[k], upper_boundary[k], theta);
  }

  bool operator==(const ThresholdPolicy& o) const {
    return grid == o.grid && lower_boundary == o.lower_boundary &&
           upper_boundary == o.upper_boundary && theta == o.theta;
  }
};

namespace detail {

// Crossings of a nondecreasing slice with a level, linear between nodes.
// Infinite results mean the region is empty or covers the whole axis.

inline double last_at_or_below(const std::vector<double>& p, const SpatialAxis& axis,
                               double level) {
  const std::size_t n = p.size();
  if (p[0] > level) return -kInf;
  if (p[n - 1] <= level) return kInf;
  std::size_t j = 0;
  while (j + 1 < n && p[j + 1] <= level) ++j;
  const double lam = (level - p[j]) / (p[j + 1] - p[j]);
  return axis.x(j) + lam * axis.dx();
}

inline double first_at_or_above(const std::vector<double>& p, const SpatialAxis& axis,
                                double level) {
  const std::size_t n = p.size();
  if (p[n - 1] < level) return kInf;
  if (p[0] >= level) return -kInf;
  std::size_t j = n - 1;
  while (j > 0 && p[j - 1] >= level) --j;
  const double lam = (level - p[j - 1]) / (p[j] - p[j - 1]);
  return axis.x(j - 1) + lam * axis.dx();
}

}  // namespace detail

/// Free boundaries from the crossings of dv_dx with -gamma1 and gamma2.
/// A decrease of dv_dx beyond 1e-6 of its range is recorded in
/// dvdx_violation, and raised as ConvexityViolation when strict.
inline ThresholdPolicy extract_policy(const ValueField& vf, const ModelSpec& model,
                                      bool strict = false) {
  const auto& grid = vf.grid;
  ThresholdPolicy pol;
  pol.grid = grid;
  pol.theta = model.theta();
  pol.lower_boundary.resize(grid.nt);
  pol.upper_boundary.resize(grid.nt);
  for (std::size_t k = 0; k < grid.nt; ++k) {
    const auto& p = vf.dv_dx[k];
    const auto [lo, hi] = std::minmax_element(p.begin(), p.end());
    const double range = *hi - *lo;
    double worst = 0.0;
    for (std::size_t j = 0; j + 1 < p.size(); ++j) worst = std::max(worst, p[j] - p[j + 1]);
    if (worst > 1e-6 * range) {
      pol.dvdx_violation = std::max(pol.dvdx_violation, worst);
      if (strict) {
        throw Error(ErrorKind::ConvexityViolation,
                    "extract_policy: dv_dx decreases by " + std::to_string(worst) +
                        " at time index " + std::to_string(k));
      }
    }
    pol.lower_boundary[k] = detail::last_at_or_below(p, grid.space, -model.gamma1());
    pol.upper_boundary[k] = detail::first_at_or_above(p, grid.space, model.gamma2());
  }
  return pol;
}

/// Smallest second difference over interior nodes of every slice.
inline double convexity_margin(const ValueField& vf) {
  double m = kInf;
  for (std::size_t k = 0; k < vf.grid.nt; ++k) {
    for (std::size_t j = 1; j + 1 < vf.grid.nx(); ++j) m = std::min(m, vf.d2v_dx2(k, j));
  }
  return m;
}

/// Same, restricted to slices before the terminal one and to nodes at least
/// `strip` nodes inside the outer boundary nodes.
inline double interior_convexity_margin(const ValueField& vf, std::size_t strip = 2) {
  double m = kInf;
  const std::size_t nx = vf.grid.nx();
  require(nx > 2 * (strip + 1), "interior_convexity_margin: strip too wide");
  for (std::size_t k = 0; k + 1 < vf.grid.nt; ++k) {
    for (std::size_t j = 1 + strip; j + 1 + strip < nx; ++j) {
      m = std::min(m, vf.d2v_dx2(k, j));
    }
  }
  return m;
}

/// int v(s, x) mu_s(dx) by trapezoidal quadrature at the first time node.
inline double aggregate_value(const ValueField& vf, const GridMeasure& mu_s) {
  require(mu_s.axis() == vf.grid.space, "aggregate_value: measure on a different grid",
          ErrorKind::GridMismatch);
  double s = 0.0;
  for (std::size_t j = 0; j < vf.grid.nx(); ++j) s += vf.v[0][j] * mu_s.mass(j);
  return s;
}

/// Policy variants used as unilateral deviations.
namespace policies {

inline ThresholdPolicy constant(const SpaceTimeGrid& grid, double theta, double a,
                                double b) {
  ThresholdPolicy p;
  p.grid = grid;
  p.theta = theta;
  p.lower_boundary.assign(grid.nt, a);
  p.upper_boundary.assign(grid.nt, b);
  return p;
}

inline ThresholdPolicy zero(const SpaceTimeGrid& grid, double theta) {
  return constant(grid, theta, -kInf, kInf);
}
inline ThresholdPolicy full_up(const SpaceTimeGrid& grid, double theta) {
  return constant(grid, theta, kInf, kInf);
}
inline ThresholdPolicy full_down(const SpaceTimeGrid& grid, double theta) {
  return constant(grid, theta, -kInf, -kInf);
}

/// Both boundaries moved by delta; infinite ones stay put.
inline ThresholdPolicy shifted(ThresholdPolicy p, double delta) {
  for (auto* c : {&p.lower_boundary, &p.upper_boundary}) {
    for (double& v : *c) {
      if (std::isfinite(v)) v += delta;
    }
  }
  return p;
}

}  // namespace policies

}  // namespace mfgsc
