#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mfgsc/fokker_planck.hpp"
#include "mfgsc/mfg.hpp"
#include "mfgsc/nplayer.hpp"
#include "mfgsc/stats.hpp"

using namespace mfgsc;

namespace {

ModelSpec custom(const std::string& name, Kernel b0, Kernel f0, double sigma, double theta,
                 double horizon = 1.0, double g1 = 0.5) {
  register_coefficients(name, [=](const ModelParams&) {
    return Coefficients{b0, f0, 1.0, 1.0, false, false};
  });
  ModelParams p;
  p.preset = name;
  p.sigma = sigma;
  p.theta = theta;
  p.horizon_T = horizon;
  p.gamma1 = g1;
  p.initial_law = InitialLaw::gaussian(-1.5, 0.3);
  return make_model(p);
}

SimulationConfig small_cfg(std::size_t reps, std::uint64_t seed = 99) {
  SimulationConfig c;
  c.n_replications = reps;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(Simulate, DeterministicTransport) {
  const double theta = 1.5;
  // Smallest representable scale of noise; positions are O(1) so it vanishes in rounding.
  const auto m = custom("np-transport", [](double, double) { return 0.0; },
                        [](double, double) { return 0.0; }, 1e-300, theta);
  const auto g = m.grid(-4, 4, 81, 31);
  const auto up = policies::full_up(g, theta);
  const auto b = simulate_nplayer(m, {up, up, up}, small_cfg(4));
  EXPECT_EQ(b.reflections, 0u);
  for (const auto& rep : b.states) {
    for (std::size_t s = 0; s < b.times.size(); ++s) {
      for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_NEAR(rep[s][i], rep[0][i] + theta * (b.times[s] - g.t_start), 1e-12);
      }
    }
  }
}

TEST(Simulate, PermutationOfPlayersPermutesPaths) {
  const auto m = make_preset("crowd-aversion");
  const auto g = m.grid(-4, 4, 81, 31);
  const auto eq = solve_mfg(m, g);
  std::vector<ThresholdPolicy> pols;
  for (int i = 0; i < 7; ++i) pols.push_back(policies::shifted(eq.policy, 0.05 * (i - 3)));
  const std::vector<std::size_t> perm{3, 0, 6, 1, 5, 2, 4};
  std::vector<ThresholdPolicy> permuted;
  for (auto p : perm) permuted.push_back(pols[p]);
  const auto cfg = small_cfg(3);
  const auto a = simulate_nplayer(m, pols, cfg);
  const auto b = simulate_nplayer(m, permuted, cfg, perm);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t s = 0; s < a.times.size(); ++s) {
      for (std::size_t i = 0; i < perm.size(); ++i) {
        ASSERT_EQ(b.states[r][s][i], a.states[r][s][perm[i]]);
      }
    }
    for (std::size_t i = 0; i < perm.size(); ++i) {
      EXPECT_EQ(b.brownian_seed_map[r][i], a.brownian_seed_map[r][perm[i]]);
    }
  }
}

TEST(Simulate, CommonRandomNumbers) {
  const auto m = custom("np-crn", [](double x, double) { return -0.3 * x; },
                        [](double x, double) { return x * x; }, 0.5, 2.0);
  const auto g = m.grid(-6, 6, 121, 31);
  const auto cfg = small_cfg(5);
  const auto zero = policies::zero(g, 2.0);
  const auto shifted = policies::constant(g, 2.0, -1.0, 1.0);
  const auto a = simulate_nplayer(m, {zero, zero}, cfg);
  const auto a2 = simulate_nplayer(m, {zero, zero}, cfg);
  const auto b = simulate_nplayer(m, {shifted, shifted}, cfg);
  EXPECT_EQ(a.states, a2.states);
  EXPECT_EQ(a.brownian_seed_map, b.brownian_seed_map);
  // Same noise increments: x_{s+1} - x_s - (drift + u) h agrees across policies.
  const double h = a.times[1] - a.times[0];
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t s = 0; s + 1 < a.times.size(); ++s) {
      for (std::size_t i = 0; i < 2; ++i) {
        auto incr = [&](const PathBundle& p) {
          const double x = p.states[r][s][i];
          return p.states[r][s + 1][i] - x - (-0.3 * x + p.controls_applied[r][s][i]) * h;
        };
        EXPECT_NEAR(incr(a), incr(b), 1e-12);
      }
    }
  }
  for (const auto& rep : b.controls_applied) {
    for (const auto& row : rep) {
      for (double u : row) EXPECT_LE(std::abs(u), 2.0);
    }
  }
}

TEST(Simulate, RejectsStepThatDoesNotDivide) {
  const auto m = make_preset("crowd-aversion");
  const auto g = m.grid(-4, 4, 81, 31);
  auto cfg = small_cfg(1);
  cfg.scheme_dt = g.dt() / 2.5;
  EXPECT_THROW(simulate_nplayer(m, {policies::zero(g, 2.0)}, cfg), Error);
}

TEST(EvaluateCost, Examples) {
  {
    const auto m = custom("np-c0", [](double, double) { return 0.0; },
                          [](double, double) { return 0.0; }, 0.5, 2.0);
    const auto g = m.grid(-4, 4, 81, 31);
    const auto b = simulate_nplayer(m, {policies::zero(g, 2.0), policies::zero(g, 2.0)},
                                    small_cfg(10));
    const auto c = evaluate_cost(m, b, 0);
    EXPECT_EQ(c.mean_cost, 0.0);
    EXPECT_EQ(c.std_error, 0.0);
  }
  {
    const auto m = custom("np-c1", [](double, double) { return 0.0; },
                          [](double, double) { return 1.0; }, 0.5, 2.0, 2.0);
    const auto g = m.grid(-4, 4, 81, 61);
    const auto b = simulate_nplayer(m, {policies::zero(g, 2.0)}, small_cfg(10));
    const auto c = evaluate_cost(m, b, 0);
    EXPECT_NEAR(c.mean_cost, 2.0, 1e-12);
    EXPECT_NEAR(c.std_error, 0.0, 1e-12);
  }
  {
    const auto m = custom("np-c2", [](double, double) { return 0.0; },
                          [](double, double) { return 0.0; }, 0.5, 3.0, 1.0, 1.0);
    const auto g = m.grid(-20, 20, 81, 61);
    const auto b = simulate_nplayer(m, {policies::full_up(g, 3.0)}, small_cfg(10));
    EXPECT_EQ(b.reflections, 0u);
    EXPECT_NEAR(evaluate_cost(m, b, 0).mean_cost, 3.0, 1e-12);
  }
}

TEST(Simulate, SinglePlayerMatchesForwardEquation) {
  const auto m = make_preset("decoupled");
  const auto g = m.grid(-4, 4, 161, 61);
  const auto eq = solve_mfg(m, g);
  const FokkerPlanck fp(m, g, flow_coefficients(m, eq.mu_star).drift, eq.policy);
  const auto pde = fp.propagate(m.initial_law().to_grid(g.space));
  std::vector<double> finals;
  for (std::uint64_t chunk = 0; chunk < 10; ++chunk) {
    const auto b = simulate_nplayer(m, {eq.policy}, small_cfg(10000, 1000 + chunk));
    for (const auto& rep : b.states) finals.push_back(rep.back()[0]);
  }
  ASSERT_EQ(finals.size(), 100000u);
  const auto mc = empirical_to_grid(finals, g.space);
  const double w1 = wasserstein(mc, pde[g.nt - 1], 1);
  RecordProperty("w1", std::to_string(w1));
  EXPECT_LE(w1, 3.0 * g.dx());
}

class SmallEquilibrium : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    model = new ModelSpec(make_preset("crowd-aversion"));
    eq = new EquilibriumResult(solve_mfg(*model, model->grid(-4, 4, 81, 31)));
  }
  static void TearDownTestSuite() {
    delete eq;
    delete model;
  }
  static SimulationConfig cfg(std::size_t threads = 1) {
    SimulationConfig c;
    c.n_replications = 24;
    c.reference_particles = 1 << 13;
    c.threads = threads;
    return c;
  }
  static inline ModelSpec* model = nullptr;
  static inline EquilibriumResult* eq = nullptr;
};

TEST_F(SmallEquilibrium, EquilibriumDeviationHasZeroGap) {
  const auto lib = build_library(parse_deviations("eq"), eq->policy);
  const auto rep = ne_gap(*model, *eq, {8, 32}, lib, cfg());
  for (const auto& r : rep.rows) {
    EXPECT_EQ(r.gap, 0.0);
    EXPECT_EQ(r.gap_se, 0.0);
  }
}

TEST_F(SmallEquilibrium, ThreadCountDoesNotChangeResults) {
  const auto lib = build_library(default_deviations(), eq->policy);
  const auto a = nplayer_experiment(*model, *eq, {8, 32}, lib, cfg(1), true, true);
  const auto b = nplayer_experiment(*model, *eq, {8, 32}, lib, cfg(4), true, true);
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    EXPECT_EQ(a.rows[i].coupling_err_sq, b.rows[i].coupling_err_sq);
    EXPECT_EQ(a.rows[i].gap, b.rows[i].gap);
    EXPECT_EQ(a.rows[i].gap_se, b.rows[i].gap_se);
    EXPECT_EQ(a.rows[i].envelope, b.rows[i].envelope);
  }
  EXPECT_EQ(a.slope_coupling, b.slope_coupling);
}

TEST_F(SmallEquilibrium, GapsAreNotRobustlyNegativeBeyondNoise) {
  const auto lib = build_library(default_deviations(), eq->policy);
  const auto rep = ne_gap(*model, *eq, {16, 64}, lib, cfg());
  for (const auto& r : rep.rows) EXPECT_GE(r.gap, -3.0 * r.gap_se - 1e-12);
}

TEST(Coupling, DecoupledIsExactlyZero) {
  const auto m = make_preset("decoupled");
  const auto eq = solve_mfg(m, m.grid(-4, 4, 81, 31));
  SimulationConfig c;
  c.n_replications = 16;
  c.reference_particles = 1 << 12;
  const auto rep = coupling_error(m, eq, {4, 16, 64}, c);
  for (const auto& r : rep.rows) EXPECT_EQ(r.coupling_err_sq, 0.0);
}

TEST(FvGap, BudgetArithmeticAndReductionToNeGap) {
  const auto m = make_preset("crowd-aversion");
  const auto g = m.grid(-4, 4, 81, 81);
  const auto sw = theta_sweep(m, {2, 4}, g, default_probes(m));
  SimulationConfig c;
  c.n_replications = 16;
  c.reference_particles = 1 << 12;
  const double C = 0.4;
  const auto specs = parse_deviations("shift(0.1), zero, full_up, full_down");
  const auto fv = fv_gap(m, sw, {2, 4}, {8, 32}, specs, c, C);
  for (const auto& r : fv.rows) {
    const std::size_t idx = r.theta == 2 ? 0 : 1;
    EXPECT_DOUBLE_EQ(r.budget, C / std::sqrt(double(r.n)) + sw.epsilon_theta[idx]);
  }
  // At theta_max the sweep policy is the equilibrium best response.
  ASSERT_EQ(sw.policies.back(), sw.reference.policy);
  const auto top = m.with_theta(4);
  const auto ne = ne_gap(top, sw.reference, {8, 32}, build_library(specs, sw.reference.policy), c);
  for (std::size_t i = 0; i < 2; ++i) {
    const auto& a = fv.rows[2 + i];
    EXPECT_EQ(a.theta, 4.0);
    EXPECT_EQ(a.gap, ne.rows[i].gap);
    EXPECT_EQ(a.gap_se, ne.rows[i].gap_se);
  }
}

TEST(Deviations, Parsing) {
  const auto d = parse_deviations("shift(0.1), shift(-0.1), zero, full_up, full_down, burst(theta_max), burst(8), eq");
  ASSERT_EQ(d.size(), 8u);
  EXPECT_EQ(d[1].value, -0.1);
  EXPECT_TRUE(d[5].burst_at_max);
  EXPECT_EQ(d[6].value, 8.0);
  EXPECT_THROW(parse_deviations("shift(x)"), Error);
  EXPECT_THROW(parse_deviations("wobble"), Error);
  EXPECT_THROW(parse_deviations(" , "), Error);
}

TEST(Stats, MergeMatchesSequential) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z(3.0, 2.0);
  std::vector<double> xs(1000);
  for (auto& x : xs) x = z(rng);
  RunningStats all;
  for (double x : xs) all.add(x);
  RunningStats merged;
  for (std::size_t b = 0; b < xs.size(); b += 37) {
    RunningStats part;
    for (std::size_t i = b; i < std::min(xs.size(), b + 37); ++i) part.add(xs[i]);
    merged.merge(part);
  }
  EXPECT_NEAR(merged.mean(), all.mean(), 1e-10 * std::abs(all.mean()));
  EXPECT_NEAR(merged.variance(), all.variance(), 1e-10 * all.variance());
  EXPECT_EQ(merged.count(), all.count());
}

TEST(Stats, LogLogFitRecoversPowerLaw) {
  std::vector<double> n{64, 128, 256, 512}, y;
  for (double v : n) y.push_back(3.0 * std::pow(v, -0.75));
  const auto fit = loglog_fit(n, y);
  EXPECT_NEAR(fit.slope, -0.75, 1e-12);
  EXPECT_NEAR(fit.r_squared, 1.0, 1e-12);
}

TEST(Stats, SeedsAreDistinctAndStable) {
  EXPECT_EQ(brownian_seed(1, 2, 3), brownian_seed(1, 2, 3));
  EXPECT_NE(brownian_seed(1, 2, 3), brownian_seed(1, 3, 2));
  EXPECT_NE(brownian_seed(1, 0, 0), brownian_seed(2, 0, 0));
}
