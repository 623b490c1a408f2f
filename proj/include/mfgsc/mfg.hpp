#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mfgsc/errors.hpp"
#include "mfgsc/fokker_planck.hpp"
#include "mfgsc/grid.hpp"
#include "mfgsc/hjb.hpp"
#include "mfgsc/measure.hpp"
#include "mfgsc/model.hpp"

namespace mfgsc {

/// Value, policy and propagated flow for one frozen input flow.
struct BestResponse {
  ValueField value;
  ThresholdPolicy policy;
  GridMeasureFlow flow;
};

inline BestResponse best_response(const ModelSpec& model, const CoefficientTable& table,
                                  const GridMeasureFlow& flow) {
  require_model_grid(model, flow.grid);
  auto coeffs = flow_coefficients(table, flow);
  auto value = solve_hjb(model, coeffs);
  auto policy = extract_policy(value, model);
  const FokkerPlanck fp(model, flow.grid, std::move(coeffs.drift), policy);
  auto out = fp.propagate(model.initial_law().to_grid(flow.grid.space));
  return {std::move(value), std::move(policy), std::move(out)};
}

/// Gamma = Gamma2 o Gamma1: best-response policy under the flow, then the
/// initial law pushed forward under that policy and the flow's drift.
inline GridMeasureFlow gamma_map(const ModelSpec& model, const GridMeasureFlow& flow) {
  return best_response(model, CoefficientTable(model, flow.grid.space), flow).flow;
}

enum class InitFlow { Transported, Gaussian, Uniform };

inline InitFlow parse_init_flow(const std::string& s) {
  if (s == "transported" || s == "default") return InitFlow::Transported;
  if (s == "gaussian") return InitFlow::Gaussian;
  if (s == "uniform") return InitFlow::Uniform;
  throw Error(ErrorKind::Parse, "unknown init flow '" + s + "'");
}

/// Starting flows for the fixed-point iteration.
///   Transported: initial law moved with zero control and b frozen at the
///                initial law.
///   Gaussian:    the initial law held constant in time.
///   Uniform:     uniform on the middle half of the domain, constant in time.
inline GridMeasureFlow initial_flow(const ModelSpec& model, const SpaceTimeGrid& grid,
                                    InitFlow kind = InitFlow::Transported) {
  require_model_grid(model, grid);
  const auto mu0 = model.initial_law().to_grid(grid.space);
  switch (kind) {
    case InitFlow::Gaussian:
      return constant_flow(grid, mu0);
    case InitFlow::Uniform: {
      const double c = 0.5 * (grid.space.x_min + grid.space.x_max);
      const double h = 0.25 * (grid.space.x_max - grid.space.x_min);
      return constant_flow(grid, InitialLaw::uniform(c - h, c + h).to_grid(grid.space));
    }
    case InitFlow::Transported:
      break;
  }
  const CoefficientTable table(model, grid.space);
  std::vector<std::vector<double>> drift(grid.nt, table.drift(mu0));
  const FokkerPlanck fp(model, grid, std::move(drift), policies::zero(grid, model.theta()));
  return fp.propagate(mu0);
}

/// Convex combination of densities slice by slice, renormalised.
inline GridMeasureFlow mix_flows(const GridMeasureFlow& a, const GridMeasureFlow& b,
                                 double lambda) {
  require(a.grid == b.grid, "mix_flows: flows on different grids", ErrorKind::GridMismatch);
  std::vector<GridMeasure> out;
  out.reserve(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    const auto& da = a[k].density();
    const auto& db = b[k].density();
    std::vector<double> d(da.size());
    for (std::size_t j = 0; j < d.size(); ++j) d[j] = (1.0 - lambda) * da[j] + lambda * db[j];
    out.push_back(GridMeasure::normalized(a.grid.space, std::move(d)));
  }
  return GridMeasureFlow(a.grid, std::move(out));
}

struct MfgOptions {
  double damping = 0.5;
  double tol = 1e-4;
  std::size_t max_iter = 100;
  // The first update replaces the starting flow by its image.
  bool undamped_first_step = true;
};

struct EquilibriumResult {
  GridMeasureFlow mu_star;
  ValueField value;
  ThresholdPolicy policy;
  std::vector<double> residual_history;
  std::size_t iterations = 0;
  bool converged = false;
};

/// Damped Picard iteration mu <- (1 - lambda) mu + lambda Gamma(mu) until
/// d_M(Gamma(mu), mu) <= tol. The returned flow is the last iterate whose
/// residual was measured; value and policy are the best response to it.
inline EquilibriumResult solve_mfg(const ModelSpec& model, const GridMeasureFlow& init,
                                   const MfgOptions& opt = {}) {
  require(opt.damping > 0.0 && opt.damping <= 1.0, "solve_mfg: damping must be in (0, 1]");
  require(opt.tol > 0.0, "solve_mfg: tol must be > 0");
  require(opt.max_iter >= 1, "solve_mfg: max_iter must be >= 1");
  require_model_grid(model, init.grid);
  model.check_cfl(init.grid);
  const CoefficientTable table(model, init.grid.space);

  EquilibriumResult res;
  GridMeasureFlow mu = init;
  for (std::size_t it = 0; it < opt.max_iter; ++it) {
    auto br = best_response(model, table, mu);
    const double r = flow_distance(br.flow, mu);
    require(std::isfinite(r), "solve_mfg: non-finite residual", ErrorKind::NonFinite);
    res.residual_history.push_back(r);
    res.iterations = it + 1;
    res.value = std::move(br.value);
    res.policy = std::move(br.policy);
    if (r <= opt.tol) {
      res.converged = true;
      break;
    }
    if (it + 1 == opt.max_iter) break;
    const double lambda = (it == 0 && opt.undamped_first_step) ? 1.0 : opt.damping;
    mu = lambda == 1.0 ? std::move(br.flow) : mix_flows(mu, br.flow, lambda);
  }
  res.mu_star = std::move(mu);
  return res;
}

inline EquilibriumResult solve_mfg(const ModelSpec& model, const SpaceTimeGrid& grid,
                                   const MfgOptions& opt = {},
                                   InitFlow init = InitFlow::Transported) {
  return solve_mfg(model, initial_flow(model, grid, init), opt);
}

struct ThetaSweepResult {
  std::vector<double> thetas;
  std::vector<std::pair<double, double>> probes;  // (s, x)
  std::vector<std::vector<double>> values_at_probe;  // [theta][probe]
  std::vector<double> epsilon_theta;
  std::vector<ThresholdPolicy> policies;
  std::vector<ValueField> values;
  EquilibriumResult reference;  // equilibrium at the largest theta
};

/// Probes at the start time, x from -3 to 3 in steps of 0.25.
inline std::vector<std::pair<double, double>> default_probes(const ModelSpec& model) {
  std::vector<std::pair<double, double>> p;
  for (int i = -12; i <= 12; ++i) p.emplace_back(model.start_time(), 0.25 * i);
  return p;
}

/// Bounded-velocity problems for each theta against the equilibrium flow of
/// the largest theta, all on one grid.
inline ThetaSweepResult theta_sweep(const ModelSpec& model_base,
                                    const std::vector<double>& thetas,
                                    const SpaceTimeGrid& grid,
                                    const std::vector<std::pair<double, double>>& probes,
                                    const MfgOptions& opt = {},
                                    InitFlow init = InitFlow::Transported) {
  require(thetas.size() >= 2, "theta_sweep: need at least two thetas");
  require(!probes.empty(), "theta_sweep: no probe points");
  for (std::size_t i = 0; i < thetas.size(); ++i) {
    require(thetas[i] > 0.0, "theta_sweep: thetas must be > 0");
    require(i == 0 || thetas[i] >= thetas[i - 1], "theta_sweep: thetas must be ascending");
  }
  const double theta_max = thetas.back();
  const auto top = model_base.with_theta(theta_max);
  top.check_cfl(grid);

  ThetaSweepResult out;
  out.thetas = thetas;
  out.probes = probes;
  out.reference = solve_mfg(top, grid, opt, init);
  const auto coeffs = flow_coefficients(top, out.reference.mu_star);
  for (double th : thetas) {
    const auto m = model_base.with_theta(th);
    auto vf = solve_hjb(m, coeffs);
    std::vector<double> row;
    row.reserve(probes.size());
    for (const auto& [s, x] : probes) row.push_back(vf.at(s, x));
    out.values_at_probe.push_back(std::move(row));
    out.policies.push_back(extract_policy(vf, m));
    out.values.push_back(std::move(vf));
  }
  const auto& ref = out.values_at_probe.back();
  for (const auto& row : out.values_at_probe) {
    double e = 0.0;
    for (std::size_t p = 0; p < row.size(); ++p) e = std::max(e, std::abs(row[p] - ref[p]));
    out.epsilon_theta.push_back(e);
  }
  return out;
}

}  // namespace mfgsc
