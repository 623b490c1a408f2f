#include <gtest/gtest.h>

#include <cmath>

#include "mfgsc/fokker_planck.hpp"
#include "mfgsc/mfg.hpp"

using namespace mfgsc;

namespace {

ModelSpec drift_model(const std::string& name, Kernel b0, double sigma, double horizon,
                      InitialLaw law) {
  register_coefficients(name, [=](const ModelParams&) {
    return Coefficients{b0, [](double x, double) { return x * x; }, 1.0, 1.0, false, false};
  });
  ModelParams p;
  p.preset = name;
  p.sigma = sigma;
  p.horizon_T = horizon;
  p.initial_law = law;
  return make_model(p);
}

std::vector<std::vector<double>> drift_table(const ModelSpec& m, const SpaceTimeGrid& g) {
  const CoefficientTable table(m, g.space);
  const auto mu0 = m.initial_law().to_grid(g.space);
  return std::vector<std::vector<double>>(g.nt, table.drift(mu0));
}

}  // namespace

TEST(FokkerPlanck, HeatKernelVariance) {
  const auto m = drift_model("fp-heat", [](double, double) { return 0.0; }, 1.0, 0.5,
                             InitialLaw::gaussian(0.0, 0.5));
  const auto g = m.grid(-4, 4, 401, 51);
  const FokkerPlanck fp(m, g, drift_table(m, g), policies::zero(g, m.theta()));
  const auto flow = fp.propagate(m.initial_law().to_grid(g.space));
  const double v0 = flow[0].variance();
  EXPECT_NEAR(v0, 0.25, 2.5e-3);
  EXPECT_NEAR(flow[g.nt - 1].variance(), 0.75, 0.0075);
}

TEST(FokkerPlanck, ConstantDriftMovesMean) {
  const double c = 0.4;
  const auto m = drift_model("fp-drift", [c](double, double) { return c; }, 1e-3, 1.0,
                             InitialLaw::gaussian(-1.0, 0.4));
  const auto g = m.grid(-4, 4, 401, 101);
  const FokkerPlanck fp(m, g, drift_table(m, g), policies::zero(g, m.theta()));
  const auto flow = fp.propagate(m.initial_law().to_grid(g.space));
  for (std::size_t k = 0; k + 1 < g.nt; ++k) {
    EXPECT_NEAR(flow[k + 1].mean() - flow[k].mean(), c * g.dt(), 1e-6);
  }
}

TEST(FokkerPlanck, MassConservedEachStep) {
  for (const char* name : {"crowd-aversion", "mean-reversion", "decoupled"}) {
    const auto m = make_preset(name);
    const auto g = m.grid(-4, 4, 161, 61);
    const auto eq = solve_mfg(m, g);
    const FokkerPlanck fp(m, g, flow_coefficients(m, eq.mu_star).drift, eq.policy);
    auto mass = m.initial_law().to_grid(g.space).masses();
    for (std::size_t k = 0; k + 1 < g.nt; ++k) {
      fp.step(k, mass);
      double total = 0.0;
      for (double v : mass) total += v;
      EXPECT_NEAR(total, 1.0, 1e-12) << name << " step " << k;
    }
  }
}

TEST(FokkerPlanck, SingleStepHelperMatchesPropagator) {
  const auto m = make_preset("crowd-aversion");
  const auto g = m.grid(-4, 4, 161, 61);
  const auto eq = solve_mfg(m, g);
  const FokkerPlanck fp(m, g, flow_coefficients(m, eq.mu_star).drift, eq.policy);
  const auto flow = fp.propagate(eq.mu_star[0]);
  const auto one = fokker_planck_step(m, eq.policy, eq.mu_star, flow[7], 7);
  EXPECT_EQ(one.density(), flow[8].density());
}

TEST(GammaMap, DecoupledIgnoresInputFlow) {
  const auto m = make_preset("decoupled");
  const auto g = m.grid(-4, 4, 161, 61);
  const auto a = gamma_map(m, initial_flow(m, g, InitFlow::Gaussian));
  const auto b = gamma_map(m, initial_flow(m, g, InitFlow::Uniform));
  EXPECT_LE(flow_distance(a, b), 1e-10);
}

TEST(GammaMap, OutputIsRegularWithUnitMass) {
  for (const char* name : {"crowd-aversion", "mean-reversion"}) {
    const auto m = make_preset(name);
    const auto g = m.grid(-4, 4, 161, 61);
    const auto out = gamma_map(m, initial_flow(m, g, InitFlow::Uniform));
    for (const auto& mu : out.measures) EXPECT_NEAR(mu.total_mass(), 1.0, 1e-10);
    const auto reg = flow_regularity(out);
    EXPECT_LE(reg.holder_seminorm, 1.5 * (m.c1() + m.theta() + m.sigma())) << name;
  }
}

TEST(SolveMfg, DecoupledNeedsOneEffectiveEvaluation) {
  const auto m = make_preset("decoupled");
  const auto eq = solve_mfg(m, m.grid(-4, 4, 161, 61));
  EXPECT_TRUE(eq.converged);
  ASSERT_EQ(eq.residual_history.size(), 2u);
  EXPECT_LE(eq.residual_history[1], 1e-4);
}

TEST(SolveMfg, CrowdAversionUniqueAcrossInits) {
  const auto m = make_preset("crowd-aversion");
  const auto g = m.grid(-4, 4, 161, 61);
  MfgOptions opt;
  opt.damping = 0.5;
  opt.tol = 1e-4;
  const auto a = solve_mfg(m, g, opt, InitFlow::Gaussian);
  const auto b = solve_mfg(m, g, opt, InitFlow::Uniform);
  ASSERT_TRUE(a.converged);
  ASSERT_TRUE(b.converged);
  EXPECT_LE(flow_distance(a.mu_star, b.mu_star), 5e-4);
  RecordProperty("iterations_gaussian", static_cast<int>(a.iterations));
  RecordProperty("iterations_uniform", static_cast<int>(b.iterations));
}

TEST(SolveMfg, ValidatesOptions) {
  const auto m = make_preset("crowd-aversion");
  const auto g = m.grid(-4, 4, 81, 31);
  MfgOptions opt;
  opt.damping = 0.0;
  EXPECT_THROW(solve_mfg(m, g, opt), Error);
  opt = {};
  opt.max_iter = 2;
  const auto r = solve_mfg(m, g, opt);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.residual_history.size(), 2u);
}

TEST(ThetaSweep, RepeatedThetaGivesZero) {
  const auto m = make_preset("crowd-aversion");
  const auto g = m.grid(-4, 4, 81, 81);
  const auto sw = theta_sweep(m, {5, 5}, g, default_probes(m));
  for (double e : sw.epsilon_theta) EXPECT_EQ(e, 0.0);
}

TEST(ThetaSweep, ValueNonincreasingInTheta) {
  const auto m = make_preset("crowd-aversion");
  const auto g = m.grid(-4, 4, 81, 161);
  const auto sw = theta_sweep(m, {1, 2, 4, 8}, g, default_probes(m));
  for (std::size_t i = 0; i + 1 < sw.thetas.size(); ++i) {
    for (std::size_t k = 0; k < g.nt; ++k) {
      for (std::size_t j = 0; j < g.nx(); ++j) {
        EXPECT_LE(sw.values[i + 1].v[k][j], sw.values[i].v[k][j] + 1e-8);
      }
    }
  }
  EXPECT_EQ(sw.epsilon_theta.back(), 0.0);
  for (std::size_t i = 0; i + 1 < sw.epsilon_theta.size(); ++i) {
    EXPECT_GE(sw.epsilon_theta[i], sw.epsilon_theta[i + 1]);
  }
}

TEST(ThetaSweep, RejectsDescendingThetas) {
  const auto m = make_preset("crowd-aversion");
  EXPECT_THROW(theta_sweep(m, {4, 2}, m.grid(-4, 4, 81, 81), default_probes(m)), Error);
}
