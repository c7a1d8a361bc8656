#include <cmath>

#include <gtest/gtest.h>

#include "prefhedge/equilibrium.hpp"
#include "prefhedge/mc.hpp"
#include "support.hpp"

using namespace prefhedge;
using testing_support::small_sim;

TEST(SimulationTimes, EndpointsAndTailRefinement) {
    const double t0 = 3.0, T = 40.0;
    const std::vector<double> plain = simulation_times(t0, T, 100, false);
    ASSERT_EQ(plain.size(), 101u);
    EXPECT_EQ(plain.front(), t0);
    EXPECT_EQ(plain.back(), T);
    const std::vector<double> tail = simulation_times(t0, T, 100, true);
    ASSERT_EQ(tail.size(), 101u);
    EXPECT_EQ(tail.back(), T);
    const double cut = T - 0.01 * (T - t0);
    std::size_t in_tail = 0;
    for (std::size_t i = 1; i < tail.size(); ++i) {
        EXPECT_GT(tail[i], tail[i - 1]);
        if (tail[i - 1] >= cut - 1e-12) ++in_tail;
    }
    EXPECT_EQ(in_tail, 25u);
    const std::vector<double> extra = simulation_times(t0, T, 100, true, {10.123});
    EXPECT_NE(std::find(extra.begin(), extra.end(), 10.123), extra.end());
}

TEST(Simulate, ZeroPolicyIsRiskFree) {
    ModelParams p;
    p.rho = 0.6;
    const SimConfig sim = small_sim(2000, 60);
    const double t0 = 5.0, x0 = 1.7;
    const double exact = std::log(x0) + p.r * (p.T - t0);
    const PathBatch u = simulate_unconditional(ConstantPolicy{0.0}, t0, x0, p.y0, sim, p);
    const PathBatch c = simulate_conditioned(ConstantPolicy{0.0}, t0, x0, p.y0, 2.0, sim, p);
    for (std::size_t i = 0; i < u.n_paths(); ++i) {
        EXPECT_NEAR(u.log_x[i], exact, 1e-12);
        EXPECT_NEAR(c.log_x[i], exact, 1e-12);
    }
}

TEST(Simulate, UnconditionalPreferenceMoments) {
    ModelParams p;
    SimConfig sim = small_sim(40000, 40);
    sim.antithetic = false;
    const double t0 = 10.0;
    const PathBatch b = simulate_unconditional(ConstantPolicy{0.3}, t0, 1.0, p.y0, sim, p);
    const double m = p.y0 + p.mu_Y * (p.T - t0), v = p.sigma_Y * p.sigma_Y * (p.T - t0);
    const SampleMean mean = sample_mean(b.n_paths(), false, [&](std::size_t i) { return b.y[i]; });
    const SampleMean var = sample_mean(b.n_paths(), false, [&](std::size_t i) { return (b.y[i] - m) * (b.y[i] - m); });
    EXPECT_LT(std::abs(z_score(mean.mean, m, mean.se)), 3.0);
    EXPECT_LT(std::abs(z_score(var.mean, v, var.se)), 3.0);
}

TEST(Simulate, GeometricBrownianLogMoment) {
    ModelParams p;
    p.rho = 0.0;
    SimConfig sim = small_sim(40000, 50);
    const PathBatch b = simulate_unconditional(ConstantPolicy{1.0}, 0.0, 1.0, p.y0, sim, p);
    const double exact = (p.mu_S - 0.5 * p.sigma_S * p.sigma_S) * p.T;
    const SampleMean m = sample_mean(b.n_paths(), b.antithetic, [&](std::size_t i) { return b.log_x[i]; });
    EXPECT_LT(std::abs(z_score(m.mean, exact, m.se)), 3.0);
}

TEST(Simulate, WealthPositiveAndBridgePinned) {
    ModelParams p;
    p.rho = 0.6;
    SimConfig sim = small_sim(4000, 80);
    sim.record_paths = true;
    const double ybar = 1.8;
    const PathBatch b = simulate_conditioned(ConstantPolicy{2.5}, 0.0, 1.0, p.y0, ybar, sim, p);
    ASSERT_TRUE(b.has_paths());
    for (std::size_t i = 0; i < b.n_paths(); ++i)
        for (std::size_t k = 0; k < b.n_times(); ++k) ASSERT_GT(b.x_at(i, k), 0.0);
    const double last_dt = b.times[b.n_times() - 1] - b.times[b.n_times() - 2];
    std::size_t pinned = 0;
    for (double y : b.y) pinned += std::abs(y - ybar) < 3.0 * p.sigma_Y * std::sqrt(last_dt) ? 1 : 0;
    EXPECT_GE(static_cast<double>(pinned) / static_cast<double>(b.n_paths()), 0.999);
    EXPECT_EQ(b.measure, Measure::conditioned);
}

TEST(Simulate, DeterministicAndThreadIndependent) {
    ModelParams p;
    p.rho = 0.6;
    SimConfig sim = small_sim(6000, 40);
    sim.block_size = 512;
    const PathBatch a = simulate_conditioned(ConstantPolicy{0.4}, 0.0, 1.0, p.y0, 1.5, sim, p);
    const PathBatch b = simulate_conditioned(ConstantPolicy{0.4}, 0.0, 1.0, p.y0, 1.5, sim, p);
    EXPECT_TRUE(a.log_x == b.log_x && a.y == b.y);
    sim.threads = 3;
    const PathBatch c = simulate_conditioned(ConstantPolicy{0.4}, 0.0, 1.0, p.y0, 1.5, sim, p);
    EXPECT_TRUE(a.log_x == c.log_x && a.y == c.y);
    sim.seed += 1;
    const PathBatch d = simulate_conditioned(ConstantPolicy{0.4}, 0.0, 1.0, p.y0, 1.5, sim, p);
    EXPECT_FALSE(a.log_x == d.log_x);
}

TEST(Reward, ZeroPolicyIsDeterministicRollUp) {
    ModelParams p;
    p.rho = 0.6;
    const double t0 = 4.0, x0 = 2.0;
    const RewardEstimate j = reward_mc(ConstantPolicy{0.0}, t0, x0, p.y0, small_sim(2000, 40), p, gauss_hermite(7));
    EXPECT_NEAR(j.value, std::log(x0) + p.r * (p.T - t0), 1e-12);
    EXPECT_FALSE(j.any_flagged());
}

TEST(Reward, ConstantPolicyLognormalOracle) {
    // ln X_T given Y_T = ybar is Gaussian under a constant policy, so each node's
    // phi(E u) is ln x0 + log_h_constant_policy / (1 - gamma)
    for (double rho : {0.0, 0.6}) {
        ModelParams p;
        p.rho = rho;
        const double t0 = 10.0, x0 = 1.0, pi = 0.6;
        const GaussHermite rule = gauss_hermite(7);
        const RewardEstimate j = reward_mc(ConstantPolicy{pi}, t0, x0, p.y0, small_sim(40000, 60), p, rule);
        double exact = 0.0;
        const std::vector<double> nodes = terminal_nodes(t0, p.y0, p, rule);
        for (std::size_t q = 0; q < nodes.size(); ++q)
            exact += rule.weights[q] * (std::log(x0) + log_h_constant_policy(p.T - t0, p.y0, nodes[q], pi, p) /
                                                           (1.0 - std::exp(nodes[q])));
        EXPECT_LT(std::abs(z_score(j.value, exact, j.se)), 3.0) << "rho=" << rho << " mc=" << j.value << " exact=" << exact;
    }
}

TEST(Reward, MeasureConsistency) {
    // E[u^{gamma(Y_T)}(X_T)] directly vs density-weighted conditioned expectations
    ModelParams p;
    p.rho = 0.6;
    const double t0 = 20.0, pi = 0.5;
    SimConfig sim = small_sim(40000, 60);
    const PathBatch u = simulate_unconditional(ConstantPolicy{pi}, t0, 1.0, p.y0, sim, p);
    const SampleMean direct = sample_mean(u.n_paths(), u.antithetic, [&](std::size_t i) {
        const double a = 1.0 - std::exp(u.y[i]);
        return std::exp(a * u.log_x[i]) / a;
    });
    const GaussHermite rule = gauss_hermite(15);
    const std::vector<double> nodes = terminal_nodes(t0, p.y0, p, rule);
    double mixed = 0.0, var = 0.0;
    for (std::size_t q = 0; q < nodes.size(); ++q) {
        const PathBatch c = simulate_conditioned(ConstantPolicy{pi}, t0, 1.0, p.y0, nodes[q], sim, p, 100 + q);
        const SampleMean e = expected_utility(c, std::exp(nodes[q]));
        mixed += rule.weights[q] * e.mean;
        var += rule.weights[q] * rule.weights[q] * e.se * e.se;
    }
    EXPECT_LT(std::abs(mixed - direct.mean) / std::sqrt(var + direct.se * direct.se), 3.0);
}

TEST(GRepresentation, ZeroPolicyLimit) {
    ModelParams p;
    p.rho = 0.6;
    auto g = testing_support::grid_for(p);
    const HSurface h = HSurface::from_log_function(
        g, p.hash(), [&](double t, double, double yb) { return p.r * (1.0 - std::exp(yb)) * (p.T - t); });
    // on a ybar node the cubic interpolation in ybar is exact
    const double ybar = g->ybar_nodes[g->nybar() - 3];
    const GReport r = verify_g_representation(h, ConstantPolicy{0.0}, 5.0, 1.3, p.y0, ybar, small_sim(2000, 30), p);
    const double exact = crra_utility(1.3 * std::exp(p.r * (p.T - 5.0)), std::exp(ybar));
    EXPECT_NEAR(r.pide / exact, 1.0, 1e-12);
    EXPECT_NEAR(r.conditioned.mean / exact, 1.0, 1e-12);
    EXPECT_NEAR(r.unconditional.mean / exact, 1.0, 1e-12);
    EXPECT_EQ(r.z_conditioned, 0.0);
    EXPECT_EQ(r.z_unconditional, 0.0);
}

TEST(GRepresentation, SolvedPolicyConditionedLine) {
    ModelParams p;
    p.rho = 0.6;
    auto g = testing_support::grid_for(p);
    const FixedPointResult r = fixed_point_solve(g, p);
    const double t0 = 20.0, y0 = std::log(2.0);
    const double ybar = conditional_mean(t0, y0, p);
    const GReport rep = verify_g_representation(r.h, r.policy, t0, 1.0, y0, ybar, small_sim(40000, 100), p);
    EXPECT_LT(std::abs(rep.z_conditioned), 3.0) << rep.conditioned.mean << " vs " << rep.pide;
}

TEST(Spike, CommonRandomNumbersReduceVariance) {
    ModelParams p;
    p.rho = 0.6;
    SimConfig sim = small_sim(20000, 60);
    sim.antithetic = false;
    const double ybar = 1.6, g = std::exp(ybar), a = 1.0 - g;
    auto util = [&](const PathBatch& b, std::size_t i) { return std::exp(a * b.log_x[i]) / a; };
    const PathBatch base = simulate_conditioned(ConstantPolicy{0.3}, 0.0, 1.0, p.y0, ybar, sim, p, 5);
    const PathBatch same = simulate_conditioned(ConstantPolicy{0.35}, 0.0, 1.0, p.y0, ybar, sim, p, 5);
    const PathBatch other = simulate_conditioned(ConstantPolicy{0.35}, 0.0, 1.0, p.y0, ybar, sim, p, 6);
    const SampleMean crn = sample_mean(base.n_paths(), false, [&](std::size_t i) { return util(base, i) - util(same, i); });
    const SampleMean ind = sample_mean(base.n_paths(), false, [&](std::size_t i) { return util(base, i) - util(other, i); });
    EXPECT_LT(crn.se, ind.se);
    EXPECT_LT(crn.se, 0.2 * ind.se);
}

TEST(Spike, ClosedFormPolicyWithoutCorrelation) {
    ModelParams p;
    p.rho = 0.0;
    auto g = testing_support::grid_for(p);
    const PolicySurface pi = closed_form_policy_surface(g, p);
    const double y0 = std::log(2.0);
    const double centre = pi.at(0.0, y0);
    const std::vector<double> spikes{centre - 0.2, centre - 0.05, centre, centre + 0.1};
    const SpikeReport rep =
        equilibrium_spike_test(pi, 0.0, 1.0, y0, small_sim(20000, 80), p, {0.5, 0.25}, spikes, gauss_hermite(7));
    EXPECT_EQ(rep.limitation, std::string(kSpikeLimitation));
    EXPECT_TRUE(rep.all_pass);
    EXPECT_FALSE(rep.improvement_found);
    for (const SpikeRow& row : rep.rows) {
        if (row.spike == centre) {
            EXPECT_LT(std::abs(row.quotient), 3.0 * row.se + 1e-6);
        }
    }
}

TEST(Spike, FrozenRiskAversionIsCaught) {
    ModelParams p;
    p.rho = 0.0;
    p.mu_Y = -0.02;
    const double y0 = std::log(2.0);
    const ConstantPolicy frozen{(p.mu_S - p.r) / (p.sigma_S * p.sigma_S * std::exp(y0))};
    const SpikeReport rep = equilibrium_spike_test(frozen, 0.0, 1.0, y0, small_sim(20000, 80), p, {0.5},
                                                   {frozen.value + 0.2}, gauss_hermite(7));
    EXPECT_TRUE(rep.improvement_found);
    EXPECT_FALSE(rep.all_pass);
}

TEST(Bridge, ConditionalDynamicsChecks) {
    ModelParams p;
    p.rho = 0.6;
    const double ybar = conditional_mean(0.0, p.y0, p) + conditional_stddev(0.0, p);
    const BridgeReport r = bridge_checks(p, 0.0, p.y0, ybar, small_sim(40000, 100));
    EXPECT_TRUE(r.score_ok) << r.score_max_rel_err;
    EXPECT_TRUE(r.drift_ok) << r.drift_identity_max_err;
    EXPECT_TRUE(r.pin_ok) << r.pinned_fraction;
    EXPECT_TRUE(r.moments_ok) << r.mid_mean_z << " " << r.mid_var_z;
    EXPECT_TRUE(r.law_ok) << r.ks_p_value;
}

TEST(Bridge, KolmogorovSmirnovHelpers) {
    EXPECT_EQ(ks_statistic({1, 2, 3}, {1, 2, 3}), 0.0);
    EXPECT_DOUBLE_EQ(ks_statistic({1, 2}, {3, 4}), 1.0);
    EXPECT_NEAR(ks_p_value(0.0, 100, 100), 1.0, 1e-12);
    EXPECT_LT(ks_p_value(0.5, 1000, 1000), 1e-10);
}

TEST(SampleMean, AntitheticPairsAreOneSample) {
    // pairs (2i, 2i+1) average to exactly zero: no variance left
    const SampleMean m = sample_mean(10, true, [](std::size_t i) { return i % 2 ? -1.0 * static_cast<double>(i) : static_cast<double>(i + 1); });
    EXPECT_DOUBLE_EQ(m.mean, 0.0);
    EXPECT_DOUBLE_EQ(m.se, 0.0);
    EXPECT_THROW(sample_mean(2, true, [](std::size_t) { return 1.0; }), ConfigError);
}
