#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mfgsc/errors.hpp"
#include "mfgsc/grid.hpp"
#include "mfgsc/hjb.hpp"
#include "mfgsc/measure.hpp"
#include "mfgsc/model.hpp"
#include "mfgsc/tridiagonal.hpp"

namespace mfgsc {

/// Node-centred finite volumes for dm/dt = -d/dx[(b + phi) m] + sigma^2/2 m''.
///
/// Each grid step is split into equal substeps with dt_sub * vmax <= dx / 2.
/// A substep is an explicit upwind transport of node masses through the cell
/// interfaces (no flux through the ends) followed by implicit diffusion with
/// the conservative Laplacian, so total mass is preserved up to rounding.
/// The control entering an interface velocity is its average over the cell.
class FokkerPlanck {
 public:
  /// drift[k][j] = b(x_j, mu_{t_k}); the policy must live on the same grid.
  FokkerPlanck(const ModelSpec& model, const SpaceTimeGrid& grid,
               std::vector<std::vector<double>> drift, const ThresholdPolicy& policy)
      : grid_(grid), drift_(std::move(drift)), policy_(policy) {
    require(drift_.size() == grid_.nt, "fokker_planck: drift table does not match grid",
            ErrorKind::GridMismatch);
    require(policy_.grid == grid_, "fokker_planck: policy on a different grid",
            ErrorKind::GridMismatch);
    const std::size_t nx = grid_.nx();
    double vmax = 0.0;
    for (const auto& row : drift_) {
      require(row.size() == nx, "fokker_planck: drift row size != nx",
              ErrorKind::GridMismatch);
      for (double b : row) vmax = std::max(vmax, std::abs(b));
    }
    vmax += policy_.theta;
    const double dx = grid_.dx();
    substeps_ = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(grid_.dt() * vmax / (0.5 * dx) - 1e-12)));
    dt_sub_ = grid_.dt() / static_cast<double>(substeps_);

    weight_.resize(nx);
    for (std::size_t j = 0; j < nx; ++j) weight_[j] = grid_.space.weight(j);
    const double beta = dt_sub_ * model.sigma() * model.sigma() / (2.0 * dx);
    std::vector<double> lower(nx, -beta);
    std::vector<double> upper(nx, -beta);
    std::vector<double> diag(nx);
    for (std::size_t j = 0; j < nx; ++j) {
      const double links = (j == 0 || j + 1 == nx) ? 1.0 : 2.0;
      diag[j] = weight_[j] + links * beta;
    }
    lower[0] = 0.0;
    upper[nx - 1] = 0.0;
    diffusion_ = TridiagonalSolver(std::move(lower), std::move(diag), std::move(upper));
  }

  std::size_t substeps() const { return substeps_; }

  /// Node masses at t_k to node masses at t_{k+1}.
  void step(std::size_t k, std::vector<double>& mass) const {
    const std::size_t nx = grid_.nx();
    require(k + 1 < grid_.nt, "fokker_planck: step index out of range");
    require(mass.size() == nx, "fokker_planck: mass vector size != nx",
            ErrorKind::GridMismatch);
    const auto& b = drift_[k];
    std::vector<double> dens(nx);
    std::vector<double> flux(nx - 1);
    for (std::size_t s = 0; s < substeps_; ++s) {
      const double t = grid_.t(k) + static_cast<double>(s) * dt_sub_;
      const auto [a_t, b_t] = policy_.boundaries(t);
      for (std::size_t j = 0; j < nx; ++j) dens[j] = mass[j] / weight_[j];
      for (std::size_t j = 0; j + 1 < nx; ++j) {
        const double vel = 0.5 * (b[j] + b[j + 1]) + cell_control(j, a_t, b_t);
        flux[j] = vel > 0.0 ? vel * dens[j] : vel * dens[j + 1];
      }
      for (std::size_t j = 0; j < nx; ++j) {
        const double out = (j + 1 < nx) ? flux[j] : 0.0;
        const double in = (j > 0) ? flux[j - 1] : 0.0;
        mass[j] -= dt_sub_ * (out - in);
      }
      diffusion_.solve(mass);
      for (std::size_t j = 0; j < nx; ++j) {
        double m = mass[j] * weight_[j];
        if (m < 0.0) {
          if (m < -1e-12) {
            throw Error(ErrorKind::NegativeDensity,
                        "fokker_planck: negative mass " + std::to_string(m) +
                            " at time index " + std::to_string(k));
          }
          m = 0.0;
        }
        mass[j] = m;
      }
    }
  }

  GridMeasure step(std::size_t k, const GridMeasure& m_k) const {
    require(m_k.axis() == grid_.space, "fokker_planck: measure on a different grid",
            ErrorKind::GridMismatch);
    auto mass = m_k.masses();
    step(k, mass);
    return to_measure(mass);
  }

  /// The whole flow started from m0 at the first time node.
  GridMeasureFlow propagate(const GridMeasure& m0) const {
    require(m0.axis() == grid_.space, "fokker_planck: measure on a different grid",
            ErrorKind::GridMismatch);
    std::vector<GridMeasure> out;
    out.reserve(grid_.nt);
    out.push_back(m0);
    auto mass = m0.masses();
    for (std::size_t k = 0; k + 1 < grid_.nt; ++k) {
      step(k, mass);
      out.push_back(to_measure(mass));
    }
    return GridMeasureFlow(grid_, std::move(out));
  }

 private:
  GridMeasure to_measure(const std::vector<double>& mass) const {
    std::vector<double> d(mass.size());
    for (std::size_t j = 0; j < mass.size(); ++j) d[j] = mass[j] / weight_[j];
    return GridMeasure(grid_.space, std::move(d));
  }

  // Mean of the threshold control over [x_j, x_{j+1}].
  double cell_control(std::size_t j, double a, double b) const {
    const double lo = grid_.x(j);
    const double hi = lo + grid_.dx();
    const double up = std::clamp(a, lo, hi) - lo;
    const double down = hi - std::clamp(b, lo, hi);
    return policy_.theta * (up - down) / grid_.dx();
  }

  SpaceTimeGrid grid_;
  std::vector<std::vector<double>> drift_;
  ThresholdPolicy policy_;
  std::size_t substeps_ = 1;
  double dt_sub_ = 0.0;
  std::vector<double> weight_;
  TridiagonalSolver diffusion_;
};

/// One grid step of the forward equation under the policy, with the drift
/// coupled to drift_flow at t_k.
inline GridMeasure fokker_planck_step(const ModelSpec& model, const ThresholdPolicy& policy,
                                      const GridMeasureFlow& drift_flow,
                                      const GridMeasure& m_k, std::size_t k) {
  model.check_cfl(drift_flow.grid);
  require(k + 1 < drift_flow.grid.nt, "fokker_planck_step: k out of range");
  const CoefficientTable table(model, drift_flow.grid.space);
  std::vector<std::vector<double>> drift(drift_flow.grid.nt);
  drift[k] = table.drift(drift_flow[k]);
  for (auto& row : drift) {
    if (row.empty()) row.assign(drift_flow.grid.nx(), 0.0);
  }
  return FokkerPlanck(model, drift_flow.grid, std::move(drift), policy).step(k, m_k);
}

}  // namespace mfgsc
