#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mfgsc/errors.hpp"
#include "mfgsc/grid.hpp"
#include "mfgsc/measure.hpp"

namespace mfgsc {

using Kernel = std::function<double(double, double)>;

/// Law of the state at the start time.
struct InitialLaw {
  enum class Kind { Gaussian, Uniform, Atoms };

  Kind kind = Kind::Gaussian;
  double a = 0.0;  // mean, or lower end for Uniform
  double b = 1.0;  // std, or upper end for Uniform
  std::vector<std::pair<double, double>> atoms;

  static InitialLaw gaussian(double mean, double std_dev) {
    require(std_dev > 0.0, "initial_law: gaussian std must be > 0");
    return {Kind::Gaussian, mean, std_dev, {}};
  }
  static InitialLaw uniform(double lo, double hi) {
    require(lo < hi, "initial_law: uniform needs a < b");
    return {Kind::Uniform, lo, hi, {}};
  }
  static InitialLaw discrete(std::vector<std::pair<double, double>> atoms) {
    require(!atoms.empty(), "initial_law: atoms list is empty");
    double total = 0.0;
    for (const auto& at : atoms) {
      require(at.second > 0.0, "initial_law: atom weights must be > 0");
      total += at.second;
    }
    for (auto& at : atoms) at.second /= total;
    return {Kind::Atoms, 0.0, 0.0, std::move(atoms)};
  }

  /// Density on the axis (atoms snapped to nodes), unit trapezoidal mass.
  GridMeasure to_grid(const SpatialAxis& axis) const {
    switch (kind) {
      case Kind::Gaussian: {
        std::vector<double> d(axis.nx);
        for (std::size_t j = 0; j < axis.nx; ++j) {
          const double z = (axis.x(j) - a) / b;
          d[j] = std::exp(-0.5 * z * z);
        }
        return GridMeasure::normalized(axis, std::move(d));
      }
      case Kind::Uniform: {
        std::vector<double> d(axis.nx, 0.0);
        for (std::size_t j = 0; j < axis.nx; ++j) {
          const double x = axis.x(j);
          if (x >= a && x <= b) d[j] = 1.0;
        }
        return GridMeasure::normalized(axis, std::move(d));
      }
      case Kind::Atoms:
        return GridMeasure::from_atoms(axis, atoms);
    }
    throw Error(ErrorKind::InvalidArgument, "initial_law: unknown kind");
  }

  /// One draw; atoms are placed on the snapped node so particles and grid
  /// describe the same law.
  template <class Engine>
  double sample(Engine& engine, const SpatialAxis& axis) const {
    switch (kind) {
      case Kind::Gaussian: {
        std::normal_distribution<double> n(a, b);
        return n(engine);
      }
      case Kind::Uniform: {
        std::uniform_real_distribution<double> u(a, b);
        return u(engine);
      }
      case Kind::Atoms: {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        double r = u(engine);
        for (const auto& [x, w] : atoms) {
          if (r < w) return axis.x(GridMeasure::axis_index(axis, x));
          r -= w;
        }
        return axis.x(GridMeasure::axis_index(axis, atoms.back().first));
      }
    }
    return a;
  }

  std::string describe() const;
};

/// Scalar problem parameters; the preset name selects b0 and f0.
struct ModelParams {
  std::string preset = "crowd-aversion";
  double beta = 0.5;
  double kappa = 1.0;
  double sigma = 0.8;
  double gamma1 = 0.5;
  double gamma2 = 0.5;
  std::optional<double> theta = 2.0;
  double horizon_T = 1.0;
  double start_time_s = 0.0;
  InitialLaw initial_law = InitialLaw::gaussian(0.5, 0.5);
};

/// Interaction coefficients plus the bookkeeping constants the solvers need.
struct Coefficients {
  Kernel b0;
  Kernel f0;
  double c1 = 0.0;   // sup |b0| on the computational domain
  double c_f = 0.0;  // |f0(x,y)| <= c_f (1 + x^2 + y^2)
  bool b0_depends_on_y = true;
  bool f0_depends_on_y = true;
};

using CoefficientFactory = std::function<Coefficients(const ModelParams&)>;

inline std::map<std::string, CoefficientFactory>& coefficient_registry() {
  static std::map<std::string, CoefficientFactory> registry = [] {
    std::map<std::string, CoefficientFactory> r;
    r["crowd-aversion"] = [](const ModelParams& p) {
      const double beta = p.beta;
      const double kappa = p.kappa;
      return Coefficients{
          [beta, kappa](double x, double y) { return beta * std::tanh(kappa * (y - x)); },
          [](double x, double y) { return 0.5 * (x + y) * (x + y); },
          std::abs(beta), 1.0, true, true};
    };
    r["mean-reversion"] = [](const ModelParams& p) {
      const double beta = p.beta;
      const double kappa = p.kappa;
      return Coefficients{
          [beta, kappa](double x, double y) { return beta * std::tanh(kappa * (y - x)); },
          [](double x, double y) { return x * x + x * y; },
          std::abs(beta), 1.5, true, true};
    };
    r["decoupled"] = [](const ModelParams&) {
      return Coefficients{[](double x, double) { return -std::tanh(x); },
                          [](double x, double) { return x * x; }, 1.0, 1.0, false,
                          false};
    };
    return r;
  }();
  return registry;
}

/// Adds or replaces a named coefficient pair.
inline void register_coefficients(const std::string& name, CoefficientFactory factory) {
  coefficient_registry()[name] = std::move(factory);
}

/// A fully specified problem instance. Immutable after construction.
class ModelSpec {
 public:
  ModelSpec(ModelParams params, Coefficients coeffs)
      : params_(std::move(params)), coeffs_(std::move(coeffs)) {
    const auto& p = params_;
    require(p.gamma1 + p.gamma2 > 0.0,
            "model: gamma1 + gamma2 must be > 0 (value function would be -inf)");
    require(p.sigma > 0.0, "model: sigma must be > 0");
    require(!p.theta || *p.theta > 0.0, "model: theta must be > 0");
    require(p.horizon_T > 0.0, "model: T must be > 0");
    require(p.start_time_s >= 0.0 && p.start_time_s < p.horizon_T,
            "model: need 0 <= s < T");
    require(static_cast<bool>(coeffs_.b0) && static_cast<bool>(coeffs_.f0),
            "model: b0 and f0 must be set");
    require(coeffs_.c1 >= 0.0, "model: c1 must be >= 0");
  }

  const ModelParams& params() const { return params_; }
  const Coefficients& coefficients() const { return coeffs_; }

  const std::string& name() const { return params_.preset; }
  double b0(double x, double y) const { return coeffs_.b0(x, y); }
  double f0(double x, double y) const { return coeffs_.f0(x, y); }
  double sigma() const { return params_.sigma; }
  double gamma1() const { return params_.gamma1; }
  double gamma2() const { return params_.gamma2; }
  bool has_theta() const { return params_.theta.has_value(); }
  double theta() const {
    require(params_.theta.has_value(),
            "model: no velocity bound (finite-variation mode) where one is required");
    return *params_.theta;
  }
  double horizon() const { return params_.horizon_T; }
  double start_time() const { return params_.start_time_s; }
  const InitialLaw& initial_law() const { return params_.initial_law; }
  double c1() const { return coeffs_.c1; }
  double c_f() const { return coeffs_.c_f; }
  bool b0_depends_on_y() const { return coeffs_.b0_depends_on_y; }
  bool f0_depends_on_y() const { return coeffs_.f0_depends_on_y; }

  /// Same problem with a different velocity bound.
  ModelSpec with_theta(double theta) const {
    ModelParams p = params_;
    p.theta = theta;
    return ModelSpec(std::move(p), coeffs_);
  }

  /// Grid on [s, T] over the given spatial window.
  SpaceTimeGrid grid(double x_min, double x_max, std::size_t nx, std::size_t nt) const {
    return SpaceTimeGrid(x_min, x_max, nx, start_time(), horizon(), nt);
  }

  /// Throws a Cfl error if dt (c1 + theta) / dx > 1.
  void check_cfl(const SpaceTimeGrid& grid) const {
    const double speed = c1() + theta();
    const double courant = grid.dt() * speed / grid.dx();
    if (courant > 1.0 + 1e-12) {
      throw Error(ErrorKind::Cfl,
                  "CFL violated: dt*(c1+theta)/dx = " + std::to_string(courant) +
                      " > 1; use nt >= " +
                      std::to_string(min_nt_for_cfl(grid, speed)));
    }
  }

 private:
  ModelParams params_;
  Coefficients coeffs_;
};

inline ModelSpec make_model(const ModelParams& params) {
  auto& reg = coefficient_registry();
  auto it = reg.find(params.preset);
  require(it != reg.end(), "model: unknown preset '" + params.preset + "'");
  return ModelSpec(params, it->second(params));
}

inline ModelSpec make_preset(const std::string& name) {
  ModelParams p;
  p.preset = name;
  return make_model(p);
}

/// b(x, mu) = int b0(x, y) mu(dy) with trapezoidal node masses.
inline double mean_field_drift(const ModelSpec& m, double x, const GridMeasure& mu) {
  if (!m.b0_depends_on_y()) return m.b0(x, x);
  double s = 0.0;
  const auto& axis = mu.axis();
  for (std::size_t j = 0; j < axis.nx; ++j) {
    const double w = mu.mass(j);
    if (w != 0.0) s += m.b0(x, axis.x(j)) * w;
  }
  return s;
}

/// f(x, mu) = int f0(x, y) mu(dy) with trapezoidal node masses.
inline double mean_field_cost(const ModelSpec& m, double x, const GridMeasure& mu) {
  if (!m.f0_depends_on_y()) return m.f0(x, x);
  double s = 0.0;
  const auto& axis = mu.axis();
  for (std::size_t j = 0; j < axis.nx; ++j) {
    const double w = mu.mass(j);
    if (w != 0.0) s += m.f0(x, axis.x(j)) * w;
  }
  return s;
}

inline double mean_field_drift(const ModelSpec& m, double x, const DiscreteMeasure& mu) {
  if (!m.b0_depends_on_y()) return m.b0(x, x);
  double s = 0.0;
  for (const auto& [y, w] : mu.atoms()) s += m.b0(x, y) * w;
  return s;
}

inline double mean_field_cost(const ModelSpec& m, double x, const DiscreteMeasure& mu) {
  if (!m.f0_depends_on_y()) return m.f0(x, x);
  double s = 0.0;
  for (const auto& [y, w] : mu.atoms()) s += m.f0(x, y) * w;
  return s;
}

/// Kernels b0(x_i, y_j), f0(x_i, y_j) tabulated on an axis, so that b and f
/// can be evaluated at every node for a whole measure flow.
class CoefficientTable {
 public:
  CoefficientTable(const ModelSpec& model, const SpatialAxis& axis)
      : axis_(axis),
        n_(axis.nx),
        b_depends_(model.b0_depends_on_y()),
        f_depends_(model.f0_depends_on_y()) {
    kb_.resize(n_ * n_);
    kf_.resize(n_ * n_);
    self_b_.resize(n_);
    self_f_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) {
      const double x = axis.x(i);
      self_b_[i] = model.b0(x, x);
      self_f_[i] = model.f0(x, x);
      for (std::size_t j = 0; j < n_; ++j) {
        kb_[i * n_ + j] = model.b0(x, axis.x(j));
        kf_[i * n_ + j] = model.f0(x, axis.x(j));
      }
    }
  }

  const SpatialAxis& axis() const { return axis_; }

  std::vector<double> drift(const GridMeasure& mu) const {
    return apply(kb_, self_b_, b_depends_, mu);
  }
  std::vector<double> cost(const GridMeasure& mu) const {
    return apply(kf_, self_f_, f_depends_, mu);
  }

 private:
  std::vector<double> apply(const std::vector<double>& k, const std::vector<double>& self,
                            bool depends, const GridMeasure& mu) const {
    require(mu.axis() == axis_, "coefficients: measure on wrong axis",
            ErrorKind::GridMismatch);
    if (!depends) return self;
    const auto w = mu.masses();
    std::vector<double> out(n_, 0.0);
    for (std::size_t i = 0; i < n_; ++i) {
      const double* row = &k[i * n_];
      double s = 0.0;
      for (std::size_t j = 0; j < n_; ++j) s += row[j] * w[j];
      out[i] = s;
    }
    return out;
  }

  SpatialAxis axis_;
  std::size_t n_;
  bool b_depends_;
  bool f_depends_;
  std::vector<double> kb_;
  std::vector<double> kf_;
  std::vector<double> self_b_;
  std::vector<double> self_f_;
};

inline std::string InitialLaw::describe() const {
  auto num = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  switch (kind) {
    case Kind::Gaussian: return "gaussian(" + num(a) + ", " + num(b) + ")";
    case Kind::Uniform: return "uniform(" + num(a) + ", " + num(b) + ")";
    case Kind::Atoms: {
      std::string s = "atoms(";
      for (std::size_t i = 0; i < atoms.size(); ++i) {
        if (i) s += ", ";
        s += "(" + num(atoms[i].first) + ", " + num(atoms[i].second) + ")";
      }
      return s + ")";
    }
  }
  return "";
}

}  // namespace mfgsc
