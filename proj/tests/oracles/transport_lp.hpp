#pragma once

// Optimal transport cost between two finite atomic measures by a dense
// two-phase simplex over all couplings pi_ij >= 0 with prescribed marginals.
// Bland's rule, so it terminates; only meant for a handful of atoms.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

namespace oracle {

using Atoms = std::vector<std::pair<double, double>>;  // (location, weight)

inline double simplex_min(std::vector<std::vector<double>> a, std::vector<double> rhs,
                          const std::vector<double>& cost) {
  // min c.x subject to A x = rhs, x >= 0, via artificial variables.
  const std::size_t m = a.size();
  const std::size_t n = cost.size();
  for (std::size_t i = 0; i < m; ++i) {
    if (rhs[i] < 0) {
      rhs[i] = -rhs[i];
      for (auto& v : a[i]) v = -v;
    }
  }
  const std::size_t cols = n + m;
  std::vector<std::vector<double>> t(m, std::vector<double>(cols + 1, 0.0));
  std::vector<std::size_t> basis(m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) t[i][j] = a[i][j];
    t[i][n + i] = 1.0;
    t[i][cols] = rhs[i];
    basis[i] = n + i;
  }
  const double eps = 1e-13;
  auto run = [&](const std::vector<double>& c, std::size_t allowed) {
    for (int guard = 0; guard < 100000; ++guard) {
      // reduced costs
      std::size_t enter = cols;
      for (std::size_t j = 0; j < allowed; ++j) {
        double r = c[j];
        for (std::size_t i = 0; i < m; ++i) r -= c[basis[i]] * t[i][j];
        if (r < -eps) {
          enter = j;
          break;
        }
      }
      if (enter == cols) return;
      std::size_t leave = m;
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < m; ++i) {
        if (t[i][enter] > eps) {
          const double ratio = t[i][cols] / t[i][enter];
          if (ratio < best - eps || (std::abs(ratio - best) <= eps && leave < m &&
                                     basis[i] < basis[leave])) {
            best = ratio;
            leave = i;
          }
        }
      }
      if (leave == m) throw std::runtime_error("simplex: unbounded");
      const double piv = t[leave][enter];
      for (auto& v : t[leave]) v /= piv;
      for (std::size_t i = 0; i < m; ++i) {
        if (i == leave) continue;
        const double fct = t[i][enter];
        if (fct == 0.0) continue;
        for (std::size_t j = 0; j <= cols; ++j) t[i][j] -= fct * t[leave][j];
      }
      basis[leave] = enter;
    }
    throw std::runtime_error("simplex: iteration limit");
  };
  std::vector<double> phase1(cols, 0.0);
  for (std::size_t j = n; j < cols; ++j) phase1[j] = 1.0;
  run(phase1, cols);
  std::vector<double> phase2(cols, 0.0);
  for (std::size_t j = 0; j < n; ++j) phase2[j] = cost[j];
  // Artificials stuck in the basis at zero level carry cost 0 and may not re-enter.
  run(phase2, n);
  double z = 0.0;
  for (std::size_t i = 0; i < m; ++i) z += phase2[basis[i]] * t[i][cols];
  return z;
}

/// min over couplings of sum pi_ij |x_i - y_j|^p, then the p-th root.
inline double transport_lp(const Atoms& mu, const Atoms& nu, int p) {
  const std::size_t r = mu.size();
  const std::size_t c = nu.size();
  std::vector<double> cost(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      cost[i * c + j] = std::pow(std::abs(mu[i].first - nu[j].first), p);
    }
  }
  // Row sums for every atom of mu; column sums for all but the last atom of nu
  // (the last is implied by total mass).
  std::vector<std::vector<double>> a;
  std::vector<double> rhs;
  for (std::size_t i = 0; i < r; ++i) {
    std::vector<double> row(r * c, 0.0);
    for (std::size_t j = 0; j < c; ++j) row[i * c + j] = 1.0;
    a.push_back(row);
    rhs.push_back(mu[i].second);
  }
  for (std::size_t j = 0; j + 1 < c; ++j) {
    std::vector<double> row(r * c, 0.0);
    for (std::size_t i = 0; i < r; ++i) row[i * c + j] = 1.0;
    a.push_back(row);
    rhs.push_back(nu[j].second);
  }
  const double z = simplex_min(a, rhs, cost);
  return std::pow(std::max(z, 0.0), 1.0 / p);
}

/// W1 as the area between the two CDFs (atoms sorted internally).
inline double w1_cdf_area(Atoms mu, Atoms nu) {
  std::vector<std::pair<double, double>> ev;
  for (auto [x, w] : mu) ev.emplace_back(x, w);
  for (auto [x, w] : nu) ev.emplace_back(x, -w);
  std::sort(ev.begin(), ev.end());
  double acc = 0.0, diff = 0.0;
  for (std::size_t i = 0; i + 1 < ev.size(); ++i) {
    diff += ev[i].second;
    acc += std::abs(diff) * (ev[i + 1].first - ev[i].first);
  }
  return acc;
}

}  // namespace oracle
