#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "mfgsc/errors.hpp"

namespace mfgsc {

/// Uniform spatial axis on the truncated domain [x_min, x_max].
struct SpatialAxis {
  double x_min = -4.0;
  double x_max = 4.0;
  std::size_t nx = 161;

  double dx() const { return (x_max - x_min) / static_cast<double>(nx - 1); }
  double x(std::size_t j) const { return x_min + static_cast<double>(j) * dx(); }

  /// Trapezoidal quadrature weight of node j.
  double weight(std::size_t j) const {
    return (j == 0 || j + 1 == nx) ? 0.5 * dx() : dx();
  }

  std::vector<double> nodes() const {
    std::vector<double> out(nx);
    for (std::size_t j = 0; j < nx; ++j) out[j] = x(j);
    return out;
  }

  bool operator==(const SpatialAxis& o) const {
    return nx == o.nx && x_min == o.x_min && x_max == o.x_max;
  }
  bool operator!=(const SpatialAxis& o) const { return !(*this == o); }
};

struct SpaceTimeGrid {
  SpatialAxis space;
  double t_start = 0.0;
  double t_end = 1.0;
  std::size_t nt = 61;

  SpaceTimeGrid() = default;
  SpaceTimeGrid(double x_min, double x_max, std::size_t nx, double t0, double t1,
                std::size_t nt_)
      : space{x_min, x_max, nx}, t_start(t0), t_end(t1), nt(nt_) {
    validate();
  }

  void validate() const {
    require(space.x_min < space.x_max, "grid: x_min must be < x_max");
    require(space.nx >= 3, "grid: nx must be >= 3");
    require(nt >= 2, "grid: nt must be >= 2");
    require(t_start < t_end, "grid: t_start must be < t_end");
  }

  std::size_t nx() const { return space.nx; }
  double dx() const { return space.dx(); }
  double dt() const { return (t_end - t_start) / static_cast<double>(nt - 1); }
  double x(std::size_t j) const { return space.x(j); }
  double t(std::size_t k) const {
    return t_start + static_cast<double>(k) * dt();
  }

  bool operator==(const SpaceTimeGrid& o) const {
    return space == o.space && nt == o.nt && t_start == o.t_start &&
           t_end == o.t_end;
  }
  bool operator!=(const SpaceTimeGrid& o) const { return !(*this == o); }
};

/// Smallest nt such that dt * max_speed / dx <= courant on the given grid.
inline std::size_t min_nt_for_cfl(const SpaceTimeGrid& grid, double max_speed,
                                  double courant = 1.0) {
  const double horizon = grid.t_end - grid.t_start;
  const double steps = std::ceil(horizon * max_speed / (courant * grid.dx()));
  return static_cast<std::size_t>(steps) + 1;
}

}  // namespace mfgsc
