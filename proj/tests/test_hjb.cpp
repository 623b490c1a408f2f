#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mfgsc/hjb.hpp"
#include "mfgsc/mfg.hpp"
#include "oracles/dp_oracle.hpp"

using namespace mfgsc;

namespace {

ModelSpec custom(const std::string& name, Kernel b0, Kernel f0, double g1 = 1.0,
                 double g2 = 1.0) {
  register_coefficients(name, [=](const ModelParams&) {
    return Coefficients{b0, f0, 1.0, 1.0, false, false};
  });
  ModelParams p;
  p.preset = name;
  p.gamma1 = g1;
  p.gamma2 = g2;
  return make_model(p);
}

GridMeasureFlow start_flow(const ModelSpec& m, const SpaceTimeGrid& g) {
  return constant_flow(g, m.initial_law().to_grid(g.space));
}

ValueField field(const SpaceTimeGrid& g, double (*fn)(double)) {
  std::vector<std::vector<double>> v(g.nt, std::vector<double>(g.nx()));
  for (auto& row : v) {
    for (std::size_t j = 0; j < g.nx(); ++j) row[j] = fn(g.x(j));
  }
  return ValueField(g, v);
}

int sign_of(double u) { return u > 0 ? 1 : (u < 0 ? -1 : 0); }

}  // namespace

TEST(Hamiltonian, Examples) {
  auto r = hamiltonian_min(0, 1, 1, 5);
  EXPECT_EQ(r.h_value, 0.0);
  EXPECT_EQ(r.control, 0.0);
  r = hamiltonian_min(-2, 1, 1, 5);
  EXPECT_EQ(r.h_value, -5.0);
  EXPECT_EQ(r.control, 5.0);
  r = hamiltonian_min(3, 1, 1, 2);
  EXPECT_EQ(r.h_value, -4.0);
  EXPECT_EQ(r.control, -2.0);
}

TEST(Hamiltonian, SignAndKinks) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> p(-5, 5), g(0.05, 2), th(0.1, 10);
  for (int i = 0; i < 20000; ++i) {
    const double g1 = g(rng), g2 = g(rng), t = th(rng), x = p(rng);
    const auto r = hamiltonian_min(x, g1, g2, t);
    EXPECT_LE(r.h_value, 0.0);
    EXPECT_EQ(r.h_value == 0.0, x >= -g1 && x <= g2);
    // The attaining control reproduces the value.
    EXPECT_NEAR(x * r.control + control_cost(r.control, g1, g2), r.h_value, 1e-12);
    // Concavity along a random chord.
    const double y = p(rng);
    const double mid = hamiltonian_min(0.5 * (x + y), g1, g2, t).h_value;
    EXPECT_GE(mid + 1e-12, 0.5 * (r.h_value + hamiltonian_min(y, g1, g2, t).h_value));
  }
  // Second differences vanish away from -g1 and g2, not at them.
  const double g1 = 0.7, g2 = 1.3, t = 3.0, h = 1e-3;
  auto h2 = [&](double x) {
    return hamiltonian_min(x + h, g1, g2, t).h_value - 2 * hamiltonian_min(x, g1, g2, t).h_value +
           hamiltonian_min(x - h, g1, g2, t).h_value;
  };
  for (double x : {-3.0, -1.0, 0.0, 0.5, 2.0, 4.0}) EXPECT_NEAR(h2(x), 0.0, 1e-12);
  EXPECT_LT(h2(-g1), -1e-6);
  EXPECT_LT(h2(g2), -1e-6);
}

TEST(SolveHjb, ZeroCostGivesZeroValue) {
  const auto m = custom("h-zero", [](double x, double) { return -0.5 * std::tanh(x); },
                        [](double, double) { return 0.0; });
  const auto g = m.grid(-4, 4, 81, 61);
  const auto vf = solve_hjb(m, start_flow(m, g));
  for (const auto& row : vf.v) {
    for (double v : row) EXPECT_EQ(v, 0.0);
  }
}

TEST(SolveHjb, UnitCostGivesRemainingTime) {
  const auto m = custom("h-one", [](double x, double) { return std::sin(x); },
                        [](double, double) { return 1.0; });
  const auto g = m.grid(-4, 4, 81, 61);
  const auto vf = solve_hjb(m, start_flow(m, g));
  for (std::size_t k = 0; k < g.nt; ++k) {
    for (double v : vf.v[k]) EXPECT_NEAR(v, g.t_end - g.t(k), 1e-12);
  }
}

TEST(SolveHjb, RejectsCflViolation) {
  const auto m = make_preset("decoupled");
  const auto g = m.grid(-4, 4, 161, 10);
  try {
    solve_hjb(m, start_flow(m, g));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Cfl);
  }
}

class DpOracle : public ::testing::Test {
 protected:
  void SetUp() override {
    model = make_preset("decoupled");
    grid = SpaceTimeGrid(-4, 4, 41, 0, 1, 40);
    eq = solve_mfg(model, grid);
    oracle::DpProblem p;
    p.nx = 41;
    p.nt = 40;
    p.sigma = model.sigma();
    p.gamma1 = model.gamma1();
    p.gamma2 = model.gamma2();
    p.theta = model.theta();
    p.drift = [this](double x) { return model.b0(x, 0.0); };
    p.cost = [this](double x) { return model.f0(x, 0.0); };
    dp = oracle::solve_dp(p);
  }
  ModelSpec model = make_preset("decoupled");
  SpaceTimeGrid grid;
  EquilibriumResult eq;
  oracle::DpSolution dp;
};

TEST_F(DpOracle, ValueWithinTwoPercent) {
  double err = 0, sup = 0;
  for (std::size_t k = 0; k < grid.nt; ++k) {
    for (std::size_t j = 0; j < grid.nx(); ++j) {
      err = std::max(err, std::abs(eq.value.v[k][j] - dp.v[k][j]));
      sup = std::max(sup, std::abs(dp.v[k][j]));
    }
  }
  EXPECT_GT(sup, 1.0);
  EXPECT_LE(err, 0.02 * sup);
}

TEST_F(DpOracle, PolicyAgreesAwayFromFreeBoundaries) {
  std::size_t agree = 0, total = 0;
  const double dx = grid.dx();
  for (std::size_t k = 1; k < grid.nt; ++k) {
    const double a = eq.policy.lower_boundary[k];
    const double b = eq.policy.upper_boundary[k];
    for (std::size_t j = 0; j < grid.nx(); ++j) {
      const double x = grid.x(j);
      const bool same = sign_of(eq.policy.control_at_node(k, x)) == dp.choice[k][j];
      agree += same;
      ++total;
      if (!same) {
        EXPECT_LE(std::min(std::abs(x - a), std::abs(x - b)), dx + 1e-12)
            << "k=" << k << " x=" << x;
      }
    }
  }
  EXPECT_GE(static_cast<double>(agree), 0.98 * static_cast<double>(total));
}

TEST(ExtractPolicy, ZeroValueMeansNoAction) {
  const auto m = custom("h-p0", [](double, double) { return 0.0; },
                        [](double, double) { return 0.0; });
  const auto g = m.grid(-2, 2, 41, 21);
  const auto pol = extract_policy(field(g, [](double) { return 0.0; }), m);
  for (std::size_t k = 0; k < g.nt; ++k) {
    EXPECT_EQ(pol.lower_boundary[k], -kInf);
    EXPECT_EQ(pol.upper_boundary[k], kInf);
    for (std::size_t j = 0; j < g.nx(); ++j) EXPECT_EQ(pol.control_at_node(k, g.x(j)), 0.0);
  }
}

TEST(ExtractPolicy, QuadraticValueThresholds) {
  const auto m = custom("h-p1", [](double, double) { return 0.0; },
                        [](double, double) { return 0.0; });
  const auto g = m.grid(-2, 2, 41, 21);
  const auto pol = extract_policy(field(g, [](double x) { return x * x; }), m, true);
  for (std::size_t k = 0; k < g.nt; ++k) {
    EXPECT_NEAR(pol.lower_boundary[k], -0.5, 1e-12);
    EXPECT_NEAR(pol.upper_boundary[k], 0.5, 1e-12);
  }
  EXPECT_EQ(pol.dvdx_violation, 0.0);
}

TEST(ExtractPolicy, StrictModeRejectsConcaveValue) {
  const auto m = custom("h-p2", [](double, double) { return 0.0; },
                        [](double, double) { return 0.0; });
  const auto g = m.grid(-2, 2, 41, 21);
  const auto vf = field(g, [](double x) { return -x * x; });
  EXPECT_GT(extract_policy(vf, m).dvdx_violation, 0.0);
  try {
    extract_policy(vf, m, true);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ConvexityViolation);
  }
}

TEST(ExtractPolicy, PresetControlsAreBangBangAndNonincreasing) {
  for (const char* name : {"crowd-aversion", "mean-reversion", "decoupled"}) {
    const auto m = make_preset(name);
    const auto eq = solve_mfg(m, m.grid(-4, 4, 161, 61));
    const auto& g = eq.policy.grid;
    for (std::size_t k = 0; k < g.nt; ++k) {
      double prev = kInf;
      for (std::size_t j = 0; j < g.nx(); ++j) {
        const double u = eq.policy.control_at_node(k, g.x(j));
        EXPECT_TRUE(u == m.theta() || u == 0.0 || u == -m.theta());
        EXPECT_LE(u, prev);
        prev = u;
      }
    }
    EXPECT_EQ(eq.policy.dvdx_violation, 0.0) << name;
  }
}

TEST(Convexity, ClosedFormFields) {
  const auto g = SpaceTimeGrid(-2, 2, 41, 0, 1, 5);
  EXPECT_NEAR(convexity_margin(field(g, [](double x) { return x * x; })), 2.0, 1e-9);
  EXPECT_EQ(convexity_margin(field(g, [](double) { return 0.0; })), 0.0);
}

TEST(Convexity, PresetSolutions) {
  for (const char* name : {"crowd-aversion", "mean-reversion", "decoupled"}) {
    const auto m = make_preset(name);
    const auto eq = solve_mfg(m, m.grid(-4, 4, 161, 61));
    EXPECT_GE(convexity_margin(eq.value), -1e-8) << name;
  }
  const auto m = make_preset("crowd-aversion");
  EXPECT_GT(interior_convexity_margin(solve_mfg(m, m.grid(-4, 4, 161, 61)).value), 0.0);
}

TEST(AggregateValue, Examples) {
  const auto g = SpaceTimeGrid(-6, 6, 601, 0, 1, 3);
  const auto mu = InitialLaw::gaussian(0, 1).to_grid(g.space);
  EXPECT_EQ(aggregate_value(field(g, [](double) { return 0.0; }), mu), 0.0);
  EXPECT_NEAR(aggregate_value(field(g, [](double) { return 2.5; }), mu), 2.5, 1e-12);
  EXPECT_NEAR(aggregate_value(field(g, [](double x) { return x * x; }), mu), 1.0, 1e-3);
}

TEST(Policies, DeviationShapes) {
  const auto g = SpaceTimeGrid(-2, 2, 21, 0, 1, 3);
  EXPECT_EQ(policies::full_up(g, 2).control(0.3, 1.9), 2.0);
  EXPECT_EQ(policies::full_down(g, 2).control(0.3, -1.9), -2.0);
  EXPECT_EQ(policies::zero(g, 2).control(0.3, 0.0), 0.0);
  const auto base = policies::constant(g, 2, -0.5, 0.5);
  const auto s = policies::shifted(base, 0.2);
  EXPECT_NEAR(s.boundaries(0.5).first, -0.3, 1e-15);
  EXPECT_NEAR(s.boundaries(0.5).second, 0.7, 1e-15);
}
