#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "mfgsc/measure.hpp"
#include "mfgsc/model.hpp"

namespace mfgsc {

struct LipschitzEstimates {
  double b0 = 0.0;
  double f0 = 0.0;
  double b = 0.0;  // in (x, D1(mu))
  double f = 0.0;
  double sup_b0 = 0.0;
  double domain_lo = 0.0;
  double domain_hi = 0.0;
};

struct MonotonicitySample {
  DiscreteMeasure mu1;
  DiscreteMeasure mu2;
  double value = 0.0;  // int (f(x,mu1) - f(x,mu2)) (mu1 - mu2)(dx)
};

struct AssumptionReport {
  LipschitzEstimates lipschitz_estimates;
  bool convexity_ok = true;
  double convexity_margin = std::numeric_limits<double>::infinity();
  std::vector<MonotonicitySample> monotonicity_samples;
  double monotonicity_min = std::numeric_limits<double>::infinity();
  bool monotone = true;
  std::string a6_note =
      "Player rationality holds structurally: threshold policies take values in "
      "{+theta, 0, -theta} and are nonincreasing in x.";
  std::string a5_hamiltonian_note =
      "The Hamiltonian gradient condition holds for the piecewise-linear H except at "
      "the kinks p = -gamma1 and p = gamma2 (measure zero); not checked numerically.";
};

/// Lasry-Lions pairing for atomic measures; exact (no quadrature).
inline double monotonicity_pairing(const ModelSpec& model, const DiscreteMeasure& mu1,
                                   const DiscreteMeasure& mu2) {
  double s = 0.0;
  for (const auto& [x, w] : mu1.atoms()) {
    s += (mean_field_cost(model, x, mu1) - mean_field_cost(model, x, mu2)) * w;
  }
  for (const auto& [x, w] : mu2.atoms()) {
    s -= (mean_field_cost(model, x, mu1) - mean_field_cost(model, x, mu2)) * w;
  }
  return s;
}

namespace detail {

template <class Engine>
DiscreteMeasure random_atomic_measure(Engine& rng, const SpatialAxis& axis) {
  std::uniform_int_distribution<int> count(2, 8);
  std::uniform_int_distribution<std::size_t> node(0, axis.nx - 1);
  std::uniform_real_distribution<double> weight(0.05, 1.0);
  const int n = count(rng);
  std::vector<std::pair<double, double>> atoms;
  atoms.reserve(n);
  for (int i = 0; i < n; ++i) atoms.emplace_back(axis.x(node(rng)), weight(rng));
  return DiscreteMeasure(std::move(atoms));
}

}  // namespace detail

/// Samples random pairs of 2-8 atom measures at grid nodes and records the
/// monotonicity pairing for each.
inline AssumptionReport check_monotonicity(const ModelSpec& model, std::size_t n_pairs,
                                           std::uint64_t seed,
                                           const SpatialAxis& axis = {-4.0, 4.0, 161},
                                           double tolerance = 1e-10) {
  require(n_pairs >= 1, "check_monotonicity: n_pairs must be >= 1");
  std::mt19937_64 rng(seed);
  AssumptionReport report;
  for (std::size_t i = 0; i < n_pairs; ++i) {
    auto mu1 = detail::random_atomic_measure(rng, axis);
    auto mu2 = detail::random_atomic_measure(rng, axis);
    const double v = monotonicity_pairing(model, mu1, mu2);
    report.monotonicity_min = std::min(report.monotonicity_min, v);
    report.monotonicity_samples.push_back({std::move(mu1), std::move(mu2), v});
  }
  report.monotone = report.monotonicity_min >= -tolerance;
  return report;
}

/// Sampled Lipschitz quotients of b0 and f0 on [lo, hi]^2, and of b and f
/// in (x, D1(mu)) for atomic measures supported in [lo, hi].
inline AssumptionReport check_lipschitz(const ModelSpec& model, double lo, double hi,
                                        std::size_t n_samples, std::uint64_t seed) {
  require(lo < hi, "check_lipschitz: invalid interval");
  require(n_samples >= 2, "check_lipschitz: n_samples must be >= 2");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> point(lo, hi);
  std::normal_distribution<double> jitter(0.0, 1e-3 * (hi - lo));
  AssumptionReport report;
  auto& est = report.lipschitz_estimates;
  est.domain_lo = lo;
  est.domain_hi = hi;

  auto clamp = [&](double v) { return std::clamp(v, lo, hi); };
  for (std::size_t i = 0; i < n_samples; ++i) {
    const double x1 = point(rng);
    const double y1 = point(rng);
    double x2;
    double y2;
    // Alternate far pairs with near pairs so local slopes are probed too.
    if (i % 2 == 0) {
      x2 = point(rng);
      y2 = point(rng);
    } else {
      x2 = clamp(x1 + jitter(rng));
      y2 = clamp(y1 + jitter(rng));
    }
    const double dist = std::abs(x1 - x2) + std::abs(y1 - y2);
    est.sup_b0 = std::max({est.sup_b0, std::abs(model.b0(x1, y1)),
                           std::abs(model.b0(x2, y2))});
    if (dist <= 0.0) continue;
    est.b0 = std::max(est.b0, std::abs(model.b0(x1, y1) - model.b0(x2, y2)) / dist);
    est.f0 = std::max(est.f0, std::abs(model.f0(x1, y1) - model.f0(x2, y2)) / dist);
  }

  const SpatialAxis axis{lo, hi, 161};
  const std::size_t n_measure = std::max<std::size_t>(2, n_samples / 16);
  for (std::size_t i = 0; i < n_measure; ++i) {
    const auto mu1 = detail::random_atomic_measure(rng, axis);
    const auto mu2 = detail::random_atomic_measure(rng, axis);
    const double x1 = point(rng);
    const double x2 = point(rng);
    const double dist = std::abs(x1 - x2) + wasserstein(mu1, mu2, 1);
    if (dist <= 0.0) continue;
    est.b = std::max(est.b, std::abs(mean_field_drift(model, x1, mu1) -
                                     mean_field_drift(model, x2, mu2)) / dist);
    est.f = std::max(est.f, std::abs(mean_field_cost(model, x1, mu1) -
                                     mean_field_cost(model, x2, mu2)) / dist);
  }
  return report;
}

/// Discrete convexity of x -> f(x, mu) on [lo, hi] for sampled measures.
inline AssumptionReport check_convexity(const ModelSpec& model, double lo, double hi,
                                        std::size_t n_measures, std::uint64_t seed,
                                        double tolerance = 1e-8) {
  require(lo < hi, "check_convexity: invalid interval");
  std::mt19937_64 rng(seed);
  const SpatialAxis axis{lo, hi, 161};
  const double h = axis.dx();
  AssumptionReport report;
  for (std::size_t i = 0; i < std::max<std::size_t>(1, n_measures); ++i) {
    const auto mu = detail::random_atomic_measure(rng, axis);
    for (std::size_t j = 1; j + 1 < axis.nx; ++j) {
      const double second = (mean_field_cost(model, axis.x(j - 1), mu) -
                             2.0 * mean_field_cost(model, axis.x(j), mu) +
                             mean_field_cost(model, axis.x(j + 1), mu)) /
                            (h * h);
      report.convexity_margin = std::min(report.convexity_margin, second);
    }
  }
  report.convexity_ok = report.convexity_margin >= -tolerance;
  return report;
}

/// All sampled checks in one report.
inline AssumptionReport check_assumptions(const ModelSpec& model, double lo, double hi,
                                          std::size_t n_samples, std::uint64_t seed) {
  AssumptionReport report = check_lipschitz(model, lo, hi, n_samples, seed);
  const auto mono = check_monotonicity(model, std::max<std::size_t>(1, n_samples / 16),
                                       seed + 1, SpatialAxis{lo, hi, 161});
  report.monotonicity_samples = mono.monotonicity_samples;
  report.monotonicity_min = mono.monotonicity_min;
  report.monotone = mono.monotone;
  const auto conv = check_convexity(model, lo, hi, 16, seed + 2);
  report.convexity_ok = conv.convexity_ok;
  report.convexity_margin = conv.convexity_margin;
  return report;
}

}  // namespace mfgsc
