#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "mfgsc/errors.hpp"
#include "mfgsc/grid.hpp"

namespace mfgsc {

inline constexpr double kMassTolerance = 1e-10;

/// Probability density sampled at the nodes of a spatial axis.
///
/// Node masses are density * trapezoid weight. For transport distances the
/// measure is read as uniform within each cell [x_j, x_{j+1}] with the
/// trapezoid cell mass, so the CDF is piecewise linear between nodes.
class GridMeasure {
 public:
  GridMeasure() = default;

  GridMeasure(SpatialAxis axis, std::vector<double> density)
      : axis_(axis), density_(std::move(density)) {
    require(density_.size() == axis_.nx, "GridMeasure: density size != nx",
            ErrorKind::GridMismatch);
    for (double d : density_) {
      require(std::isfinite(d) && d >= 0.0,
              "GridMeasure: density must be finite and nonnegative",
              ErrorKind::NegativeDensity);
    }
    require(std::abs(total_mass() - 1.0) <= kMassTolerance,
            "GridMeasure: trapezoidal mass must be 1");
  }

  /// Rescales an arbitrary nonnegative profile to unit trapezoidal mass.
  static GridMeasure normalized(SpatialAxis axis, std::vector<double> density) {
    require(density.size() == axis.nx, "GridMeasure: density size != nx",
            ErrorKind::GridMismatch);
    double mass = 0.0;
    for (std::size_t j = 0; j < axis.nx; ++j) {
      require(std::isfinite(density[j]) && density[j] >= 0.0,
              "GridMeasure: density must be finite and nonnegative",
              ErrorKind::NegativeDensity);
      mass += density[j] * axis.weight(j);
    }
    require(mass > 0.0, "GridMeasure: zero total mass");
    for (double& d : density) d /= mass;
    return GridMeasure(axis, std::move(density));
  }

  static GridMeasure from_masses(SpatialAxis axis, std::span<const double> masses) {
    require(masses.size() == axis.nx, "GridMeasure: mass vector size != nx",
            ErrorKind::GridMismatch);
    std::vector<double> density(axis.nx);
    for (std::size_t j = 0; j < axis.nx; ++j) density[j] = masses[j] / axis.weight(j);
    return normalized(axis, std::move(density));
  }

  /// Atoms are snapped to their nearest node; each one becomes a spike of
  /// the stated mass at that node.
  static GridMeasure from_atoms(SpatialAxis axis,
                                std::span<const std::pair<double, double>> atoms) {
    std::vector<double> masses(axis.nx, 0.0);
    for (const auto& [x, w] : atoms) {
      require(w >= 0.0, "GridMeasure: atom weight must be nonnegative");
      masses[axis_index(axis, x)] += w;
    }
    return from_masses(axis, masses);
  }

  static std::size_t axis_index(const SpatialAxis& axis, double x) {
    const double r = std::round((x - axis.x_min) / axis.dx());
    const double c = std::clamp(r, 0.0, static_cast<double>(axis.nx - 1));
    return static_cast<std::size_t>(c);
  }

  const SpatialAxis& axis() const { return axis_; }
  const std::vector<double>& density() const { return density_; }
  double density(std::size_t j) const { return density_[j]; }
  std::size_t size() const { return density_.size(); }

  double mass(std::size_t j) const { return density_[j] * axis_.weight(j); }

  std::vector<double> masses() const {
    std::vector<double> out(density_.size());
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = mass(j);
    return out;
  }

  double total_mass() const {
    double m = 0.0;
    for (std::size_t j = 0; j < density_.size(); ++j) m += mass(j);
    return m;
  }

  /// Trapezoidal moment int x^k mu(dx).
  double moment(int k) const {
    double m = 0.0;
    for (std::size_t j = 0; j < density_.size(); ++j) {
      m += std::pow(axis_.x(j), k) * mass(j);
    }
    return m;
  }
  double mean() const { return moment(1); }
  double second_moment() const { return moment(2); }
  double variance() const {
    const double m1 = mean();
    return second_moment() - m1 * m1;
  }

  /// CDF at the nodes, accumulated with trapezoid cell masses.
  std::vector<double> cdf_at_nodes() const {
    const double dx = axis_.dx();
    std::vector<double> cdf(density_.size(), 0.0);
    for (std::size_t j = 1; j < density_.size(); ++j) {
      cdf[j] = cdf[j - 1] + 0.5 * (density_[j - 1] + density_[j]) * dx;
    }
    return cdf;
  }

 private:
  SpatialAxis axis_;
  std::vector<double> density_;
};

/// Finite weighted point set. Weights are normalised on construction.
class DiscreteMeasure {
 public:
  DiscreteMeasure() = default;
  explicit DiscreteMeasure(std::vector<std::pair<double, double>> atoms)
      : atoms_(std::move(atoms)) {
    require(!atoms_.empty(), "DiscreteMeasure: no atoms");
    double total = 0.0;
    for (const auto& a : atoms_) {
      require(a.second >= 0.0 && std::isfinite(a.first),
              "DiscreteMeasure: invalid atom");
      total += a.second;
    }
    require(total > 0.0, "DiscreteMeasure: zero total weight");
    for (auto& a : atoms_) a.second /= total;
    std::sort(atoms_.begin(), atoms_.end());
  }

  const std::vector<std::pair<double, double>>& atoms() const { return atoms_; }

  double moment(int k) const {
    double m = 0.0;
    for (const auto& [x, w] : atoms_) m += std::pow(x, k) * w;
    return m;
  }

 private:
  std::vector<std::pair<double, double>> atoms_;
};

/// Quantile function as a sequence of segments on [0,1]; on segment i the
/// quantile runs linearly from q_lo[i] (at u[i]) to q_hi[i] (at u[i+1]).
struct PiecewiseQuantile {
  std::vector<double> u;     // size m+1, u.front()=0, u.back()=1
  std::vector<double> q_lo;  // size m
  std::vector<double> q_hi;  // size m

  double at(std::size_t seg, double uu) const {
    const double len = u[seg + 1] - u[seg];
    if (len <= 0.0) return q_lo[seg];
    const double s = std::clamp((uu - u[seg]) / len, 0.0, 1.0);
    return q_lo[seg] + s * (q_hi[seg] - q_lo[seg]);
  }
};

inline PiecewiseQuantile quantile_function(const GridMeasure& mu) {
  const auto& axis = mu.axis();
  const double dx = axis.dx();
  const auto& d = mu.density();
  std::vector<double> cell(axis.nx - 1);
  double total = 0.0;
  for (std::size_t j = 0; j + 1 < axis.nx; ++j) {
    cell[j] = 0.5 * (d[j] + d[j + 1]) * dx;
    total += cell[j];
  }
  PiecewiseQuantile q;
  q.u.push_back(0.0);
  double acc = 0.0;
  for (std::size_t j = 0; j + 1 < axis.nx; ++j) {
    if (cell[j] <= 0.0) continue;
    acc += cell[j] / total;
    q.u.push_back(acc);
    q.q_lo.push_back(axis.x(j));
    q.q_hi.push_back(axis.x(j + 1));
  }
  q.u.back() = 1.0;
  return q;
}

inline PiecewiseQuantile quantile_function(const DiscreteMeasure& mu) {
  PiecewiseQuantile q;
  q.u.push_back(0.0);
  double acc = 0.0;
  for (const auto& [x, w] : mu.atoms()) {
    if (w <= 0.0) continue;
    acc += w;
    q.u.push_back(acc);
    q.q_lo.push_back(x);
    q.q_hi.push_back(x);
  }
  q.u.back() = 1.0;
  return q;
}

namespace detail {

/// Exact integral over s in [0,1] of |a + (b - a) s|^p, for p in {1, 2}.
inline double linear_power_integral(double a, double b, int p) {
  if (p == 2) return (a * a + a * b + b * b) / 3.0;
  const double aa = std::abs(a);
  const double bb = std::abs(b);
  if (a * b >= 0.0) return 0.5 * (aa + bb);
  return 0.5 * (a * a + b * b) / (aa + bb);
}

}  // namespace detail

/// int_0^1 |Q1(u) - Q2(u)|^p du, evaluated exactly by merging breakpoints.
inline double quantile_power_integral(const PiecewiseQuantile& q1,
                                      const PiecewiseQuantile& q2, int p) {
  require(p == 1 || p == 2, "wasserstein: order must be 1 or 2");
  std::size_t i = 0;
  std::size_t k = 0;
  double lo = 0.0;
  double total = 0.0;
  const std::size_t m1 = q1.q_lo.size();
  const std::size_t m2 = q2.q_lo.size();
  while (i < m1 && k < m2) {
    const double hi = std::min(q1.u[i + 1], q2.u[k + 1]);
    if (hi > lo) {
      const double a = q1.at(i, lo) - q2.at(k, lo);
      const double b = q1.at(i, hi) - q2.at(k, hi);
      total += (hi - lo) * detail::linear_power_integral(a, b, p);
      lo = hi;
    }
    if (q1.u[i + 1] <= hi) ++i;
    if (q2.u[k + 1] <= hi) ++k;
  }
  return total;
}

/// p-Wasserstein distance between grid measures on the same axis.
inline double wasserstein(const GridMeasure& mu, const GridMeasure& nu, int p) {
  require(mu.axis() == nu.axis(), "wasserstein: measures on different grids",
          ErrorKind::GridMismatch);
  const double integral =
      quantile_power_integral(quantile_function(mu), quantile_function(nu), p);
  return p == 1 ? integral : std::sqrt(integral);
}

inline double wasserstein(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                          int p) {
  const double integral =
      quantile_power_integral(quantile_function(mu), quantile_function(nu), p);
  return p == 1 ? integral : std::sqrt(integral);
}

/// Time-indexed family of grid measures, one per time node.
struct GridMeasureFlow {
  SpaceTimeGrid grid;
  std::vector<GridMeasure> measures;

  GridMeasureFlow() = default;
  GridMeasureFlow(SpaceTimeGrid g, std::vector<GridMeasure> m)
      : grid(g), measures(std::move(m)) {
    require(measures.size() == grid.nt, "GridMeasureFlow: slice count != nt",
            ErrorKind::GridMismatch);
    for (const auto& mu : measures) {
      require(mu.axis() == grid.space, "GridMeasureFlow: slice on wrong axis",
              ErrorKind::GridMismatch);
    }
  }

  std::size_t size() const { return measures.size(); }
  const GridMeasure& operator[](std::size_t k) const { return measures[k]; }
};

inline GridMeasureFlow constant_flow(const SpaceTimeGrid& grid, const GridMeasure& mu) {
  return GridMeasureFlow(grid, std::vector<GridMeasure>(grid.nt, mu));
}

/// Sup over time nodes of the W2 distance between slices.
inline double flow_distance(const GridMeasureFlow& a, const GridMeasureFlow& b) {
  require(a.grid == b.grid, "flow_distance: flows on different grids",
          ErrorKind::GridMismatch);
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    d = std::max(d, wasserstein(a[k], b[k], 2));
  }
  return d;
}

struct FlowRegularity {
  double holder_seminorm = 0.0;    // sup W1(mu_t, mu_s) / |t - s|^(1/2)
  double max_second_moment = 0.0;  // sup_t int x^2 mu_t(dx)
};

inline FlowRegularity flow_regularity(const GridMeasureFlow& flow) {
  require(flow.grid.nt >= 2, "flow_regularity: need at least two time nodes");
  FlowRegularity out;
  std::vector<PiecewiseQuantile> q;
  q.reserve(flow.size());
  for (const auto& mu : flow.measures) {
    q.push_back(quantile_function(mu));
    out.max_second_moment = std::max(out.max_second_moment, mu.second_moment());
  }
  for (std::size_t k = 0; k < flow.size(); ++k) {
    for (std::size_t l = k + 1; l < flow.size(); ++l) {
      const double w1 = quantile_power_integral(q[k], q[l], 1);
      const double ratio = w1 / std::sqrt(flow.grid.t(l) - flow.grid.t(k));
      out.holder_seminorm = std::max(out.holder_seminorm, ratio);
    }
  }
  return out;
}

/// Linear binning of samples onto the nodes (samples clipped into the
/// domain first), normalised to a unit-mass GridMeasure.
inline GridMeasure empirical_to_grid(std::span<const double> samples,
                                     const SpatialAxis& axis) {
  require(!samples.empty(), "empirical_to_grid: empty sample set");
  std::vector<double> masses(axis.nx, 0.0);
  const double dx = axis.dx();
  const double w = 1.0 / static_cast<double>(samples.size());
  for (double s : samples) {
    const double x = std::clamp(s, axis.x_min, axis.x_max);
    double pos = (x - axis.x_min) / dx;
    auto j = static_cast<std::size_t>(pos);
    if (j >= axis.nx - 1) j = axis.nx - 2;
    const double lam = std::clamp(pos - static_cast<double>(j), 0.0, 1.0);
    masses[j] += w * (1.0 - lam);
    masses[j + 1] += w * lam;
  }
  return GridMeasure::from_masses(axis, masses);
}

}  // namespace mfgsc
