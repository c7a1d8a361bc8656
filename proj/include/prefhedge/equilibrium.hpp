#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "prefhedge/conditional.hpp"
#include "prefhedge/errors.hpp"
#include "prefhedge/grid.hpp"
#include "prefhedge/model.hpp"
#include "prefhedge/pide.hpp"
#include "prefhedge/policy.hpp"

namespace prefhedge {

/// (mu_S - r) / (sigma_S^2 E[gamma(Y_T) | Y_t = y]): the policy when the
/// hedging channel is shut (rho = 0). Also the Picard starting point.
inline double closed_form_policy_rho0(double t, double y, const ModelParams& p) {
    return (p.mu_S - p.r) / (p.sigma_S * p.sigma_S * expected_terminal_gamma(t, y, p));
}

namespace detail {

template <class SliceValue>
double integrate_over_terminal_state(const GridSpec& g, double t, double y, const ModelParams& p, SliceValue&& at_slice) {
    const double tau = remaining(t, p, "hedging_integral");
    const double mean = y + p.mu_Y * tau;
    const double sd = p.sigma_Y * std::sqrt(tau);
    double acc = 0.0;
    for (std::size_t q = 0; q < g.quadrature.size(); ++q) {
        const double yb = g.quadrature.point(q, mean, sd);
        acc += g.quadrature.weights[q] * catmull_rom(g.ybar_nodes.front(), g.dybar(), g.nybar(), yb, at_slice);
    }
    return acc;
}

inline void require_finite_slices(const HSurface& h, std::size_t n, std::size_t j) {
    const GridSpec& g = h.grid();
    for (std::size_t k = 0; k < g.nybar(); ++k) {
        if (!std::isfinite(h.log_value(n, j, k))) {
            throw PositivityError("h not strictly positive at a quadrature slice", n, j, k);
        }
    }
}

/// Hedging integral at grid node (n, j), using node elasticities.
inline double hedging_integral_node(const HSurface& h, std::size_t n, std::size_t j, const ModelParams& p) {
    const GridSpec& g = h.grid();
    require_finite_slices(h, n, j);
    return integrate_over_terminal_state(g, g.t_nodes[n], g.y_nodes[j], p,
                                         [&](std::size_t k) { return h.elasticity(n, j, k); });
}

}  // namespace detail

/// Density-weighted elasticity  int d_y h^{ybar}/h^{ybar} f_{Y_T}(ybar; t, y) dybar.
///
/// ybar runs over Gauss-Hermite points of the conditional law of Y_T; the
/// elasticity at a point is interpolated across the solved slices.
inline double hedging_integral(double t, double y, const HSurface& h, const ModelParams& p) {
    const GridSpec& g = h.grid();
    return detail::integrate_over_terminal_state(g, t, y, p, [&](std::size_t k) {
        const double e = h.elasticity_at(t, y, k);
        if (!std::isfinite(e)) throw PositivityError("h not strictly positive near the evaluation point", 0, 0, k);
        return e;
    });
}

namespace detail {

/// One time row of the policy map. `slope(j, k)` is d_y ln h at (t_n, y_j) on
/// slice k.
///
/// The two outermost columns on each side take the policy of the nearest
/// column whose difference stencil does not reach an edge node (edge values
/// come from the boundary closure, not from the equation). Holding pi rather
/// than the integral keeps a y-flat policy exact at the edges; scaling the
/// integral by the edge E[gamma] biases it by exp(-2 dy), which the far-field
/// closure feeds back into the interior.
template <class Slope>
void policy_row(const GridSpec& g, std::size_t n, const ModelParams& p, Slope&& slope, double* myopic,
                double* hedging) {
    const std::size_t ny = g.ny();
    const double t = g.t_nodes[n];
    // hedging temporarily holds the integral; scaled below
    for (std::size_t j = 0; j < ny; ++j) {
        myopic[j] = closed_form_policy_rho0(t, g.y_nodes[j], p);
        hedging[j] = 0.0;
    }
    if (p.rho == 0.0) return;
    for (std::size_t j = 2; j + 2 < ny; ++j) {
        hedging[j] = integrate_over_terminal_state(g, t, g.y_nodes[j], p, [&](std::size_t k) { return slope(j, k); });
        if (!std::isfinite(hedging[j])) throw PositivityError("h not strictly positive at a quadrature slice", n, j, 0);
    }
    const double c = p.rho * p.sigma_Y / p.sigma_S;
    for (std::size_t j = 2; j + 2 < ny; ++j) hedging[j] *= c / expected_terminal_gamma(t, g.y_nodes[j], p);
    for (std::size_t j : {std::size_t{0}, std::size_t{1}}) hedging[j] = myopic[2] + hedging[2] - myopic[j];
    for (std::size_t j : {ny - 2, ny - 1}) hedging[j] = myopic[ny - 3] + hedging[ny - 3] - myopic[j];
}

}  // namespace detail

/// Node-wise policy map: pi = (mu_S - r + rho sigma_S sigma_Y I) / (sigma_S^2 E[gamma]).
inline PolicySurface policy_from_h(const HSurface& h, const ModelParams& p) {
    const GridSpec& g = h.grid();
    const std::size_t ny = g.ny();
    PolicySurface out(h.grid_ptr());
    std::vector<double> myopic(ny), hedging(ny);
    for (std::size_t n = 0; n < g.nt(); ++n) {
        detail::policy_row(g, n, p, [&](std::size_t j, std::size_t k) { return h.elasticity(n, j, k); },
                           myopic.data(), hedging.data());
        for (std::size_t j = 0; j < ny; ++j) out.set(n, j, myopic[j], hedging[j]);
    }
    return out;
}

inline PolicySurface closed_form_policy_surface(std::shared_ptr<const GridSpec> grid, const ModelParams& p) {
    PolicySurface out(grid);
    for (std::size_t n = 0; n < grid->nt(); ++n)
        for (std::size_t j = 0; j < grid->ny(); ++j)
            out.set(n, j, closed_form_policy_rho0(grid->t_nodes[n], grid->y_nodes[j], p), 0.0);
    return out;
}

/// Density-weighted eHJB supremand at node (n, j) for a trial value pi:
///   int (d_t h + Q d_y h + R d_yy h + P h) / ((1-g) h) f dybar,
/// with Q, P evaluated at pi. Its pi-derivative vanishes at the equilibrium.
inline double supremand(const HSurface& h, std::size_t n, std::size_t j, double pi, const ModelParams& p) {
    const GridSpec& g = h.grid();
    const std::size_t nt = g.nt();
    const std::size_t ny = g.ny();
    if (n >= nt || j == 0 || j + 1 >= ny) throw OutOfGridError("supremand: interior node required");
    const double t = g.t_nodes[n];
    const double y = g.y_nodes[j];
    const double tau = detail::remaining(t, p, "supremand");
    const double dy = g.dy();
    const double mean = y + p.mu_Y * tau;
    const double sd = p.sigma_Y * std::sqrt(tau);

    auto w_t = [&](std::size_t k) {
        if (n + 1 < nt) return (h.log_value(n + 1, j, k) - h.log_value(n, j, k)) / (g.t_nodes[n + 1] - t);
        return (h.log_value(n, j, k) - h.log_value(n - 1, j, k)) / (t - g.t_nodes[n - 1]);
    };
    auto w_y = [&](std::size_t k) { return (h.log_value(n, j + 1, k) - h.log_value(n, j - 1, k)) / (2.0 * dy); };
    auto w_yy = [&](std::size_t k) {
        return (h.log_value(n, j + 1, k) - 2.0 * h.log_value(n, j, k) + h.log_value(n, j - 1, k)) / (dy * dy);
    };

    double acc = 0.0;
    for (std::size_t q = 0; q < g.quadrature.size(); ++q) {
        const double yb = g.quadrature.point(q, mean, sd);
        const double a = g.ybar_nodes.front();
        const double step = g.dybar();
        const std::size_t m = g.nybar();
        const double dt_w = detail::catmull_rom(a, step, m, yb, w_t);
        const double dy_w = detail::catmull_rom(a, step, m, yb, w_y);
        const double dyy_w = detail::catmull_rom(a, step, m, yb, w_yy);
        const Coefficients c = coefficients(t, y, yb, pi, p);
        const double one_minus_g = 1.0 - gamma_of(yb);
        acc += g.quadrature.weights[q] * (dt_w + c.Q * dy_w + c.R * (dyy_w + dy_w * dy_w) + c.P) / one_minus_g;
    }
    return acc;
}

/// Symmetric finite difference of the supremand in pi.
inline double supremand_gradient(const HSurface& h, std::size_t n, std::size_t j, double pi, const ModelParams& p,
                                 double step = 1e-4) {
    return (supremand(h, n, j, pi + step, p) - supremand(h, n, j, pi - step, p)) / (2.0 * step);
}

namespace detail {

/// Node-wise relaxation for the Picard step. Holding pi locally constant, the
/// bridge term gives the update a self-gain G = rho^2 (1 - 1/E[gamma]), which is
/// strongly negative where E[gamma] < 1 and makes plain iteration oscillate.
/// 1/(1 - G) there cancels it; positive gains are left alone.
inline double local_relaxation(double t, double y, const ModelParams& p) {
    const double gain = p.rho * p.rho * (1.0 - 1.0 / expected_terminal_gamma(t, y, p));
    return gain < 0.0 ? 1.0 / (1.0 - gain) : 1.0;
}

/// Anderson mixing for x = x + f(x) (f already preconditioned).
class Anderson {
public:
    Anderson(std::size_t dim, std::size_t depth) : dim_(dim), depth_(depth) {}

    void reset() {
        xs_.clear();
        fs_.clear();
    }

    /// Replaces x by the next iterate given the residual f at x.
    void step(std::vector<double>& x, const std::vector<double>& f) {
        xs_.push_back(x);
        fs_.push_back(f);
        if (xs_.size() > depth_ + 1) {
            xs_.erase(xs_.begin());
            fs_.erase(fs_.begin());
        }
        const std::size_t m = xs_.size() - 1;
        if (m == 0) {
            for (std::size_t i = 0; i < dim_; ++i) x[i] += f[i];
            return;
        }
        Eigen::MatrixXd dF(dim_, m), dX(dim_, m);
        for (std::size_t c = 0; c < m; ++c) {
            for (std::size_t i = 0; i < dim_; ++i) {
                dF(i, c) = fs_[c + 1][i] - fs_[c][i];
                dX(i, c) = xs_[c + 1][i] - xs_[c][i];
            }
        }
        const Eigen::Map<const Eigen::VectorXd> fk(f.data(), static_cast<Eigen::Index>(dim_));
        const Eigen::VectorXd g = dF.colPivHouseholderQr().solve(fk);
        const Eigen::VectorXd next = (dX + dF) * g;
        for (std::size_t i = 0; i < dim_; ++i) x[i] += f[i] - next(static_cast<Eigen::Index>(i));
    }

private:
    std::size_t dim_, depth_;
    std::vector<std::vector<double>> xs_, fs_;
};

}  // namespace detail

enum class StartPolicy {
    /// The rho = 0 closed form.
    closed_form,
    /// One backward sweep solving each time row jointly with h (see equilibrium_sweep).
    sweep,
};

struct FixedPointConfig {
    std::size_t max_iters = 200;
    double tol_sup = 1e-5;    // policy units
    double damping = 1.0;     // in (0, 1]; halved whenever the update grows
    double min_damping = 1.0 / 64.0;
    StartPolicy start = StartPolicy::sweep;
    double row_tol = 1e-8;    // sweep: per-row consistency, policy units
    std::size_t row_max_iters = 200;

    void validate() const {
        if (max_iters < 1) throw ConfigError("fixed_point: max_iters >= 1");
        if (!(tol_sup > 0.0)) throw ConfigError("fixed_point: tol_sup > 0");
        if (!(damping > 0.0 && damping <= 1.0)) throw ConfigError("fixed_point: 0 < damping <= 1");
        if (!(min_damping > 0.0 && min_damping <= damping)) throw ConfigError("fixed_point: 0 < min_damping <= damping");
        if (!(row_tol > 0.0)) throw ConfigError("fixed_point: row_tol > 0");
        if (row_max_iters < 1) throw ConfigError("fixed_point: row_max_iters >= 1");
    }
};

struct FixedPointResult {
    HSurface h;
    PolicySurface policy;
};

/// Equilibrium in a single backward pass. pi at t_n only sees h at t_n, which
/// only depends on pi over [t_n, T], so the slices are marched together and at
/// each node the row pi(t_n, .) is iterated to consistency with the trial step
/// before the step is committed (Anderson mixing on the relaxed update).
inline FixedPointResult equilibrium_sweep(std::shared_ptr<const GridSpec> grid, const ModelParams& p,
                                          const FixedPointConfig& cfg = {}, const SolveOptions& opt = {}) {
    p.validate();
    cfg.validate();
    grid->validate();
    const GridSpec& g = *grid;
    const std::size_t nt = g.nt();
    const std::size_t ny = g.ny();
    const std::size_t nk = g.nybar();
    const double dy = g.dy();

    HSurface h(grid, p.hash());
    if (opt.terminal == TerminalCondition::frozen_policy) h.allocate_terminal_slope();
    PolicySurface policy(grid);
    std::vector<detail::SliceMarcher> marchers;
    marchers.reserve(nk);
    for (std::size_t k = 0; k < nk; ++k) marchers.emplace_back(g, p, opt, k);

    std::vector<double> pi(ny), good(ny), resid(ny), myopic(ny), hedging(ny);
    std::vector<const std::vector<double>*> trial(nk);
    for (std::size_t j = 0; j < ny; ++j) pi[j] = closed_form_policy_rho0(g.t_nodes[nt - 1], g.y_nodes[j], p);
    detail::Anderson mixer(ny, 8);

    // evaluate(n) fills myopic/hedging from the h row the current pi induces. A
    // trial that breaks the inner solve or blows the residual up sends pi halfway
    // back to the best row seen so far.
    auto consistent_row = [&](std::size_t n, auto&& evaluate) {
        std::vector<double> history;
        double best = std::numeric_limits<double>::infinity();
        good = pi;
        mixer.reset();
        for (std::size_t it = 0; it < cfg.row_max_iters; ++it) {
            double change = std::numeric_limits<double>::infinity();
            try {
                evaluate(n);
                change = 0.0;
                for (std::size_t j = 0; j < ny; ++j) {
                    resid[j] = myopic[j] + hedging[j] - pi[j];
                    change = std::max(change, std::abs(resid[j]));
                }
            } catch (const ConvergenceError&) {
                if (it == 0) throw;
            } catch (const PositivityError&) {
                if (it == 0) throw;
            }
            history.push_back(change);
            if (change <= cfg.row_tol) return;
            if (!std::isfinite(change) || change > 10.0 * best) {
                for (std::size_t j = 0; j < ny; ++j) pi[j] = 0.5 * (pi[j] + good[j]);
                mixer.reset();
                continue;
            }
            if (change < best) {
                best = change;
                good = pi;
            }
            for (std::size_t j = 0; j < ny; ++j) resid[j] *= detail::local_relaxation(g.t_nodes[n], g.y_nodes[j], p);
            mixer.step(pi, resid);
        }
        throw ConvergenceError("equilibrium sweep: policy row " + std::to_string(n) + " did not settle", history);
    };

    consistent_row(nt - 1, [&](std::size_t n) {
        for (auto& m : marchers) m.start(pi.data());
        detail::policy_row(g, n, p, [&](std::size_t j, std::size_t k) { return marchers[k].terminal_slope(j, pi.data()); },
                           myopic.data(), hedging.data());
    });
    for (std::size_t k = 0; k < nk; ++k) {
        for (std::size_t j = 0; j < ny; ++j) {
            h.log_value_ref(nt - 1, j, k) = marchers[k].current()[j];
            if (h.has_terminal_slope()) h.set_terminal_slope(j, k, marchers[k].terminal_slope(j, pi.data()));
        }
    }
    for (std::size_t j = 0; j < ny; ++j) policy.set(nt - 1, j, myopic[j], pi[j] - myopic[j]);

    for (std::size_t n = nt - 1; n-- > 0;) {
        consistent_row(n, [&](std::size_t row) {
            detail::parallel_for(nk, opt.threads, [&](std::size_t k) { trial[k] = &marchers[k].trial(pi.data()); });
            detail::policy_row(g, row, p,
                               [&](std::size_t j, std::size_t k) { return detail::slope(trial[k]->data(), ny, dy, j); },
                               myopic.data(), hedging.data());
        });
        for (std::size_t k = 0; k < nk; ++k) {
            marchers[k].commit();
            for (std::size_t j = 0; j < ny; ++j) h.log_value_ref(n, j, k) = marchers[k].current()[j];
        }
        for (std::size_t j = 0; j < ny; ++j) policy.set(n, j, myopic[j], pi[j] - myopic[j]);
    }
    return {std::move(h), std::move(policy)};
}

/// Picard iteration pi <- (1-d) pi + d policy_from_h(solve_h(pi)) from the chosen start,
/// d = damping times the node-wise relaxation above.
///
/// Stops once the undamped update ||policy_from_h(solve_h(pi)) - pi||_sup is
/// below tol_sup; the returned h is solve_h of the returned policy.
inline FixedPointResult fixed_point_solve(std::shared_ptr<const GridSpec> grid, const ModelParams& p,
                                          const FixedPointConfig& cfg = {}, const SolveOptions& opt = {}) {
    p.validate();
    cfg.validate();
    grid->validate();
    PolicySurface pi = cfg.start == StartPolicy::sweep ? equilibrium_sweep(grid, p, cfg, opt).policy
                                                       : closed_form_policy_surface(grid, p);
    double damping = cfg.damping;
    std::vector<double> history;
    for (std::size_t it = 1; it <= cfg.max_iters; ++it) {
        HSurface h = solve_h(pi, p, opt);
        PolicySurface target = policy_from_h(h, p);
        const double change = target.sup_distance(pi);
        history.push_back(change);
        if (!std::isfinite(change)) throw ConvergenceError("fixed point: non-finite policy update", history);
        if (change < cfg.tol_sup) {
            pi.meta = {it, change, damping, history};
            return {std::move(h), std::move(pi)};
        }
        if (history.size() >= 2 && change > history[history.size() - 2]) {
            damping = std::max(cfg.min_damping, 0.5 * damping);
        }
        PolicySurface next(grid);
        for (std::size_t n = 0; n < grid->nt(); ++n) {
            for (std::size_t j = 0; j < grid->ny(); ++j) {
                const double d = damping * detail::local_relaxation(grid->t_nodes[n], grid->y_nodes[j], p);
                next.set(n, j, (1.0 - d) * pi.myopic(n, j) + d * target.myopic(n, j),
                         (1.0 - d) * pi.hedging(n, j) + d * target.hedging(n, j));
            }
        }
        pi = std::move(next);
    }
    throw ConvergenceError("fixed point: no convergence after " + std::to_string(cfg.max_iters) +
                               " iterations (last sup change " + std::to_string(history.back()) + ")",
                           history);
}

}  // namespace prefhedge
