#include <cmath>

#include <gtest/gtest.h>

#include "prefhedge/equilibrium.hpp"
#include "prefhedge/mc.hpp"
#include "reference_table.hpp"
#include "support.hpp"

using namespace prefhedge;
using testing_support::grid_for;

TEST(ClosedForm, ReferenceTableEntries) {
    ModelParams p;
    EXPECT_NEAR(closed_form_policy_rho0(0.0, std::log(2.0), p), 0.272, 1e-3);
    EXPECT_NEAR(closed_form_policy_rho0(35.0, std::log(2.0), p), 0.563, 1e-3);
    p.mu_Y = -0.02;
    EXPECT_NEAR(closed_form_policy_rho0(0.0, std::log(0.8), p), 3.368, 1e-3);
}

TEST(ClosedForm, HighPrecisionValues) {
    // 0.05 / (0.04 e^y exp((mu_Y + 0.0008)(40 - t))), 30-digit evaluation
    ModelParams p;
    EXPECT_NEAR(closed_form_policy_rho0(0.0, std::log(2.0), p), 0.271986287041472937166, 1e-14);
    EXPECT_NEAR(closed_form_policy_rho0(35.0, std::log(2.0), p), 0.563265810888252987389, 1e-14);
    p.mu_Y = -0.02;
    EXPECT_NEAR(closed_form_policy_rho0(0.0, std::log(0.8), p), 3.36789224676813074726, 1e-13);
}

TEST(ClosedForm, MertonFractionAtHorizon) {
    ModelParams p;
    for (double y : {-0.5, 0.0, 1.2})
        EXPECT_DOUBLE_EQ(closed_form_policy_rho0(p.T, y, p), (p.mu_S - p.r) / (p.sigma_S * p.sigma_S * std::exp(y)));
}

TEST(ClosedForm, StaticWhenPreferenceIsMartingaleInGamma) {
    ModelParams p;
    p.mu_Y = -0.5 * p.sigma_Y * p.sigma_Y;
    for (double y : {std::log(0.5), 0.0, std::log(3.0)}) {
        const double v0 = closed_form_policy_rho0(0.0, y, p);
        for (double t : {5.0, 17.5, 35.0, 39.99}) EXPECT_EQ(closed_form_policy_rho0(t, y, p), v0);
    }
}

TEST(HedgingIntegral, VanishesForFlatSurface) {
    ModelParams p;
    auto g = grid_for(p);
    const HSurface h = HSurface::from_log_function(g, p.hash(), [](double t, double, double yb) { return 0.1 * t * yb; });
    EXPECT_NEAR(hedging_integral(3.0, 1.0, h, p), 0.0, 1e-12);
}

TEST(HedgingIntegral, ConstantElasticity) {
    ModelParams p;
    auto g = grid_for(p);
    const double c = 0.7;
    const HSurface h = HSurface::from_log_function(g, p.hash(), [&](double, double y, double) { return c * y; });
    EXPECT_NEAR(hedging_integral(3.0, 1.0, h, p), c, 1e-10);
    EXPECT_NEAR(hedging_integral(30.0, 1.9, h, p), c, 1e-10);
}

TEST(HedgingIntegral, MatchesDenseTrapezoid) {
    ModelParams p;
    p.rho = 0.6;
    auto g = grid_for(p);
    const FixedPointResult r = fixed_point_solve(g, p);
    for (double t : {0.0, 20.0})
        for (double y : {0.4, std::log(2.0), 1.2}) {
            const double m = conditional_mean(t, y, p), sd = conditional_stddev(t, p);
            const int n = 4001;
            const double a = m - 8.0 * sd, step = 16.0 * sd / (n - 1);
            double acc = 0.0;
            for (int i = 0; i < n; ++i) {
                const double yb = a + i * step;
                const double e = detail::catmull_rom(g->ybar_nodes.front(), g->dybar(), g->nybar(), yb,
                                                     [&](std::size_t k) { return r.h.elasticity_at(t, y, k); });
                acc += (i == 0 || i == n - 1 ? 0.5 : 1.0) * e * conditional_density(yb, t, y, p);
            }
            acc *= step;
            const double gh = hedging_integral(t, y, r.h, p);
            EXPECT_LT(std::abs(gh - acc), 1e-3 * std::abs(acc)) << "t=" << t << " y=" << y;
        }
}

TEST(PolicyFromH, ComponentsAddUpAndHedgingOffWithoutCorrelation) {
    ModelParams p;
    p.rho = 0.0;
    auto g = grid_for(p);
    const HSurface h = HSurface::from_log_function(g, p.hash(), [](double, double y, double yb) { return y * yb; });
    const PolicySurface pi = policy_from_h(h, p);
    for (std::size_t n = 0; n < g->nt(); n += 5)
        for (std::size_t j = 0; j < g->ny(); ++j) {
            EXPECT_EQ(pi.hedging(n, j), 0.0);
            EXPECT_EQ(pi.pi(n, j), pi.myopic(n, j) + pi.hedging(n, j));
        }
}

TEST(PolicyFromH, FlatPolicyIsReproducedUpToTheEdges) {
    // rho = -1 and pi = (mu_S - r) / sigma_S^2 everywhere is an equilibrium; the
    // edge columns must hand it back too, or the error feeds into the closure.
    ModelParams p;
    p.rho = -1.0;
    auto g = grid_for(p);
    const double merton = (p.mu_S - p.r) / (p.sigma_S * p.sigma_S);
    PolicySurface flat(g);
    for (std::size_t n = 0; n < g->nt(); ++n)
        for (std::size_t j = 0; j < g->ny(); ++j) flat.set(n, j, merton, 0.0);
    const PolicySurface out = policy_from_h(solve_h(flat, p), p);
    for (std::size_t n = 0; n < g->nt(); n += 10)
        for (std::size_t j : {std::size_t{0}, std::size_t{1}, g->ny() / 2, g->ny() - 2, g->ny() - 1})
            EXPECT_NEAR(out.at(g->t_nodes[n], g->y_nodes[j]), merton, 1e-3) << "n=" << n << " j=" << j;
}

TEST(FixedPoint, UncorrelatedCaseIsClosedForm) {
    for (double mu : {0.02, -0.02}) {
        ModelParams p;
        p.rho = 0.0;
        p.mu_Y = mu;
        auto g = grid_for(p);
        FixedPointConfig cfg;
        cfg.start = StartPolicy::closed_form;
        const FixedPointResult r = fixed_point_solve(g, p, cfg);
        EXPECT_LE(r.policy.meta.iterations, 2u);
        for (std::size_t n = 0; n < g->nt(); ++n)
            for (std::size_t j = 0; j < g->ny(); ++j) {
                EXPECT_EQ(r.policy.hedging(n, j), 0.0);
                EXPECT_DOUBLE_EQ(r.policy.pi(n, j), closed_form_policy_rho0(g->t_nodes[n], g->y_nodes[j], p));
            }
    }
}

TEST(FixedPoint, PerfectCorrelationGivesLogUtilityFraction) {
    // rho = +-1 and a constant policy: Y_T fixes the stock noise, ln X_T is
    // deterministic given Y_T and ln h / (1 - gamma) does not depend on gamma,
    // so the criterion is expected log wealth: pi = (mu_S - r) / sigma_S^2.
    // Away from the y-edges the solver converges to it at first order.
    const double merton = ModelParams{}.mu_S - ModelParams{}.r;
    for (double rho : {1.0, -1.0})
        for (double mu : {0.02, -0.02}) {
            ModelParams p;
            p.rho = rho;
            p.mu_Y = mu;
            double err[2] = {0.0, 0.0};
            int level = 0;
            for (GridSettings s : {testing_support::small_grid(), GridSettings{}}) {
                for (double e : {0.8, 2.0, 7.0}) s.cover_y.push_back(std::log(e));
                const FixedPointResult r = fixed_point_solve(testing_support::grid_for(p, s), p);
                for (double t : {0.0, 14.0, 35.0})
                    for (double e : {0.8, 2.0, 7.0})
                        err[level] = std::max(err[level], std::abs(r.policy.at(t, std::log(e)) - merton / (p.sigma_S * p.sigma_S)));
                ++level;
            }
            EXPECT_LT(err[1], 0.01) << "rho=" << rho << " mu=" << mu;
            EXPECT_LT(err[1], 0.7 * err[0]) << "rho=" << rho << " mu=" << mu;
        }
}

TEST(FixedPoint, SweepAndPicardAgree) {
    ModelParams p;
    p.rho = 0.6;
    auto g = grid_for(p);
    FixedPointConfig sweep, picard;
    picard.start = StartPolicy::closed_form;
    const FixedPointResult a = fixed_point_solve(g, p, sweep);
    const FixedPointResult b = fixed_point_solve(g, p, picard);
    EXPECT_LT(a.policy.sup_distance(b.policy), 1e-4);
}

TEST(FixedPoint, ConvergedPairIsSelfConsistent) {
    ModelParams p;
    p.rho = 0.6;
    auto g = grid_for(p);
    FixedPointConfig cfg;
    const FixedPointResult r = fixed_point_solve(g, p, cfg);
    EXPECT_LT(policy_from_h(solve_h(r.policy, p), p).sup_distance(r.policy), cfg.tol_sup);
    for (std::size_t i = 0; i < r.policy.pi_values().size(); ++i)
        EXPECT_EQ(r.policy.pi_values()[i], r.policy.myopic_values()[i] + r.policy.hedging_values()[i]);
}

TEST(FixedPoint, ShapeAcrossTableParameterSets) {
    for (double mu : {0.02, -0.02})
        for (double rho : {0.6, -0.6}) {
            ModelParams p;
            p.mu_Y = mu;
            p.rho = rho;
            GridSettings s = testing_support::small_grid();
            s.cover_y = {0.0, 2.2};
            const FixedPointResult r = fixed_point_solve(grid_for(p, s), p);
            const double y0 = std::log(2.0);
            // increasing in t for rising preference drift, decreasing for falling
            double prev = r.policy.at(0.0, y0);
            for (double t = 5.0; t <= 35.0; t += 5.0) {
                const double v = r.policy.at(t, y0);
                if (mu > 0.0) EXPECT_GT(v, prev);
                else EXPECT_LT(v, prev);
                prev = v;
            }
            // decreasing in y
            for (double t : {0.0, 20.0}) {
                double py = r.policy.at(t, 0.0);
                for (double y = 0.2; y <= 2.2; y += 0.2) {
                    const double v = r.policy.at(t, y);
                    EXPECT_LT(v, py) << "mu=" << mu << " rho=" << rho << " t=" << t << " y=" << y;
                    py = v;
                }
            }
        }
}

TEST(FixedPoint, FirstOrderConditionAtSolvedPolicy) {
    ModelParams p;
    p.rho = 0.6;
    auto g = grid_for(p);
    const FixedPointResult r = fixed_point_solve(g, p);
    // the supremand is concave in pi; its slope at pi-hat is small next to the
    // slope one unit of curvature away
    for (std::size_t n : {std::size_t{0}, g->nt() / 2})
        for (std::size_t j : {g->ny() / 3, g->ny() / 2, 2 * g->ny() / 3}) {
            const double pi = r.policy.pi(n, j);
            const double slope = supremand_gradient(r.h, n, j, pi, p);
            const double curvature =
                (supremand_gradient(r.h, n, j, pi + 0.05, p) - supremand_gradient(r.h, n, j, pi - 0.05, p)) / 0.1;
            EXPECT_LT(curvature, 0.0);
            EXPECT_LT(std::abs(slope / curvature), 2e-3) << "n=" << n << " j=" << j;
        }
}

TEST(FixedPoint, RewardScalesWithWealth) {
    // no wealth axis: J(x) - ln x is the same for every x on shared noise
    ModelParams p;
    p.rho = 0.6;
    auto g = grid_for(p);
    const FixedPointResult r = fixed_point_solve(g, p);
    const SimConfig sim = testing_support::small_sim(4000, 50);
    const GaussHermite rule = gauss_hermite(5);
    const double j1 = reward_mc(r.policy, 0.0, 1.0, p.y0, sim, p, rule).value;
    for (double x : {0.5, 2.0}) {
        const double jx = reward_mc(r.policy, 0.0, x, p.y0, sim, p, rule).value;
        EXPECT_NEAR(jx - std::log(x), j1, 1e-10);
    }
}
