#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "prefhedge/conditional.hpp"
#include "prefhedge/errors.hpp"
#include "prefhedge/grid.hpp"
#include "prefhedge/model.hpp"
#include "prefhedge/policy.hpp"
#include "prefhedge/tridiagonal.hpp"

namespace prefhedge {

/// Coefficients of  d_t h + Q d_y h + R d_yy h + P h = 0  for one ybar slice.
struct Coefficients {
    double P;  // 1/year
    double Q;  // y-units/year
    double R;  // y-units^2/year
};

inline Coefficients coefficients(double t, double y, double ybar, double pi, const ModelParams& p) {
    const double tau = detail::remaining(t, p, "coefficients");
    const double g = gamma_of(ybar);
    const double bridge = (ybar - y) / tau;
    const double excess = p.mu_S - p.r + p.rho * (p.sigma_S / p.sigma_Y) * (bridge - p.mu_Y);
    Coefficients c;
    c.P = (p.r + pi * excess - 0.5 * pi * pi * p.sigma_S * p.sigma_S * g) * (1.0 - g);
    c.Q = bridge + p.rho * pi * p.sigma_S * p.sigma_Y * (1.0 - g);
    c.R = 0.5 * p.sigma_Y * p.sigma_Y;
    return c;
}

enum class TerminalCondition {
    /// Exact h over [T - eps_T, T] for the policy frozen at its last time slice.
    frozen_policy,
    /// h = 1 at T - eps_T.
    unit,
};

/// ln h over [T - tau, T] when pi is held constant: conditioning on Y_T fixes the
/// B1 increment, so ln(X_T/x) is Gaussian with mean m and variance v and
/// h = E[(X_T/x)^{1-g}] = exp((1-g) m + (1-g)^2 v / 2).
inline double log_h_constant_policy(double tau, double y, double ybar, double pi, const ModelParams& p) {
    const double g = gamma_of(ybar);
    const double m = (p.r + pi * (p.mu_S - p.r) - 0.5 * pi * pi * p.sigma_S * p.sigma_S) * tau +
                     pi * p.sigma_S * p.rho * (ybar - y - p.mu_Y * tau) / p.sigma_Y;
    const double v = pi * pi * p.sigma_S * p.sigma_S * (1.0 - p.rho * p.rho) * tau;
    return (1.0 - g) * m + 0.5 * (1.0 - g) * (1.0 - g) * v;
}

/// d_y ln h of the same layer with pi held fixed: the layer treats pi as
/// locally constant in y, so its slope is taken in that approximation too.
inline double elasticity_constant_policy(double ybar, double pi, const ModelParams& p) {
    return -(1.0 - gamma_of(ybar)) * pi * p.sigma_S * p.rho / p.sigma_Y;
}

struct SolveOptions {
    TerminalCondition terminal = TerminalCondition::frozen_policy;
    double inner_tol = 1e-11;          // per-step fixed point on the w_y^2 term
    std::size_t inner_max_iters = 100;
    unsigned threads = 1;              // ybar slices are independent
};

namespace detail {

/// d_y of a sampled column: central, second-order one-sided at the ends.
inline double slope(const double* w, std::size_t ny, double dy, std::size_t j) {
    if (j == 0) return (-3.0 * w[0] + 4.0 * w[1] - w[2]) / (2.0 * dy);
    if (j == ny - 1) return (3.0 * w[ny - 1] - 4.0 * w[ny - 2] + w[ny - 3]) / (2.0 * dy);
    return (w[j + 1] - w[j - 1]) / (2.0 * dy);
}

/// fn(i) for i < count on up to `threads` workers; the first exception is rethrown.
template <class Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
    const unsigned used = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
    if (used == 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(used);
    {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < used; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t i = w; i < count; i += used) fn(i);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace detail

/// h^{ybar}(t, y) on the grid, stored as ln h.
///
/// Layout of the flat value array is ybar-major, then t, then y.
class HSurface {
public:
    HSurface() = default;
    HSurface(std::shared_ptr<const GridSpec> grid, std::uint64_t params_hash)
        : grid_(std::move(grid)), log_h_(grid_->nybar() * grid_->nt() * grid_->ny(), 0.0), params_hash_(params_hash) {}

    /// Surface with ln h = f(t, y, ybar); test and oracle helper.
    template <class F>
    static HSurface from_log_function(std::shared_ptr<const GridSpec> grid, std::uint64_t params_hash, F&& f) {
        HSurface s(std::move(grid), params_hash);
        const GridSpec& g = *s.grid_;
        for (std::size_t k = 0; k < g.nybar(); ++k)
            for (std::size_t n = 0; n < g.nt(); ++n)
                for (std::size_t j = 0; j < g.ny(); ++j)
                    s.log_h_[s.index(n, j, k)] = f(g.t_nodes[n], g.y_nodes[j], g.ybar_nodes[k]);
        return s;
    }

    [[nodiscard]] const GridSpec& grid() const { return *grid_; }
    [[nodiscard]] const std::shared_ptr<const GridSpec>& grid_ptr() const { return grid_; }
    [[nodiscard]] std::uint64_t params_hash() const { return params_hash_; }
    [[nodiscard]] bool empty() const { return !grid_; }

    [[nodiscard]] std::size_t index(std::size_t n, std::size_t j, std::size_t k) const {
        return (k * grid_->nt() + n) * grid_->ny() + j;
    }

    [[nodiscard]] double log_value(std::size_t n, std::size_t j, std::size_t k) const { return log_h_[index(n, j, k)]; }
    [[nodiscard]] double value(std::size_t n, std::size_t j, std::size_t k) const { return std::exp(log_value(n, j, k)); }
    double& log_value_ref(std::size_t n, std::size_t j, std::size_t k) { return log_h_[index(n, j, k)]; }

    [[nodiscard]] const std::vector<double>& log_values() const { return log_h_; }
    std::vector<double>& log_values() { return log_h_; }

    [[nodiscard]] bool has_terminal_slope() const { return !terminal_slope_.empty(); }
    void allocate_terminal_slope() { terminal_slope_.assign(grid_->nybar() * grid_->ny(), 0.0); }
    void set_terminal_slope(std::size_t j, std::size_t k, double v) { terminal_slope_.at(k * grid_->ny() + j) = v; }
    [[nodiscard]] double terminal_slope(std::size_t j, std::size_t k) const { return terminal_slope_.at(k * grid_->ny() + j); }

    /// d_y h / h at a node: central differences, second-order one-sided at the
    /// edges. A frozen-policy terminal layer supplies its own slope instead;
    /// differencing it couples each node to its neighbours' policy only.
    [[nodiscard]] double elasticity(std::size_t n, std::size_t j, std::size_t k) const {
        const std::size_t ny = grid_->ny();
        if (n + 1 == grid_->nt() && !terminal_slope_.empty()) return terminal_slope_[k * ny + j];
        return detail::slope(&log_h_[index(n, 0, k)], ny, grid_->dy(), j);
    }

    /// Bilinear ln h at (t, y) on slice k; throws outside the grid hull.
    [[nodiscard]] double log_value_at(double t, double y, std::size_t k) const {
        const auto [n, ft, j, fy] = locate(t, y);
        const double a = log_value(n, j, k) * (1.0 - fy) + log_value(n, j + 1, k) * fy;
        const double b = log_value(n + 1, j, k) * (1.0 - fy) + log_value(n + 1, j + 1, k) * fy;
        return a * (1.0 - ft) + b * ft;
    }

    /// ln h at an arbitrary terminal state: Catmull-Rom across slices.
    [[nodiscard]] double log_value_at(double t, double y, double ybar) const {
        const GridSpec& g = *grid_;
        return detail::catmull_rom(g.ybar_nodes.front(), g.dybar(), g.nybar(), ybar,
                                   [&](std::size_t k) { return log_value_at(t, y, k); });
    }

    [[nodiscard]] double value_at(double t, double y, double ybar) const { return std::exp(log_value_at(t, y, ybar)); }

    /// Bilinear interpolation of node elasticities on slice k.
    [[nodiscard]] double elasticity_at(double t, double y, std::size_t k) const {
        const auto [n, ft, j, fy] = locate(t, y);
        const double a = elasticity(n, j, k) * (1.0 - fy) + elasticity(n, j + 1, k) * fy;
        const double b = elasticity(n + 1, j, k) * (1.0 - fy) + elasticity(n + 1, j + 1, k) * fy;
        return a * (1.0 - ft) + b * ft;
    }

private:
    struct Location {
        std::size_t n;
        double ft;
        std::size_t j;
        double fy;
    };

    [[nodiscard]] Location locate(double t, double y) const {
        const GridSpec& g = *grid_;
        const double tol = 1e-12 * g.T;
        if (!(t >= g.t_nodes.front() - tol && t <= g.t_nodes.back() + tol && y >= g.y_min() - tol &&
              y <= g.y_max() + tol)) {
            throw OutOfGridError("h-surface evaluated outside the grid hull");
        }
        const auto [n, ft] = detail::bracket(g.t_nodes, t);
        const auto [j, fy] = detail::bracket_uniform(g.y_nodes.front(), g.dy(), g.ny(), y);
        return {n, ft, j, fy};
    }

    std::shared_ptr<const GridSpec> grid_;
    std::vector<double> log_h_;
    std::vector<double> terminal_slope_;  // ybar-major, y; empty unless set
    std::uint64_t params_hash_ = 0;
};

namespace detail {

/// ln h at a y-edge when pi beyond the grid is the edge column pi(s) (the
/// clamped extension). For a policy depending on s only, ln(X_T/x) under the
/// bridge is Gaussian:
///   mean = I0 + rho sigma_S I1 (ybar - y - mu_Y tau) / (sigma_Y tau)
///   var  = sigma_S^2 (I2 - rho^2 I1^2 / tau)
/// with I1 = int pi, I2 = int pi^2, I0 = int (r + pi (mu_S - r) - pi^2 sigma_S^2 / 2) over [t, T].
struct FarField {
    double i0 = 0.0, i1 = 0.0, i2 = 0.0;
    double last_pi = 0.0;

    void start(double pi, double eps, const ModelParams& p) {
        last_pi = pi;
        add(pi, pi, eps, p);
    }
    /// Extend the integrals one step back in time (trapezoid).
    void advance(double pi, double step, const ModelParams& p) {
        add(pi, last_pi, step, p);
        last_pi = pi;
    }
    [[nodiscard]] double log_h(double tau, double y, double ybar, const ModelParams& p) const {
        const double g = gamma_of(ybar);
        const double mean = i0 + p.rho * p.sigma_S * i1 * (ybar - y - p.mu_Y * tau) / (p.sigma_Y * tau);
        const double var = p.sigma_S * p.sigma_S * (i2 - p.rho * p.rho * i1 * i1 / tau);
        return (1.0 - g) * mean + 0.5 * (1.0 - g) * (1.0 - g) * var;
    }

private:
    void add(double a, double b, double dt, const ModelParams& p) {
        const double s2 = p.sigma_S * p.sigma_S;
        i1 += 0.5 * dt * (a + b);
        i2 += 0.5 * dt * (a * a + b * b);
        i0 += 0.5 * dt * (2.0 * p.r + (a + b) * (p.mu_S - p.r) - 0.5 * s2 * (a * a + b * b));
    }
};

struct Control {
    double a;     // slope the quadratic term is linearized at
    int stencil;  // 0 central, +1 forward, -1 backward difference for the transport term
};

/// Maximizer of (Q + 2 R a) D_a w - R a^2 over a, where D_a is the central
/// difference while the cell Peclet number |Q + 2 R a| dy / (2 R) <= 1 and the
/// upwind difference beyond. Every choice yields an M-matrix row.
inline Control best_control(double Q, double R, double dy, double wm, double w0, double wp) {
    const double d0 = (wp - wm) / (2.0 * dy);
    const double dp = (wp - w0) / dy;
    const double dm = (w0 - wm) / dy;
    const double lb = (-2.0 * R / dy - Q) / (2.0 * R);
    const double ub = (2.0 * R / dy - Q) / (2.0 * R);
    auto value = [&](double a, double d) { return (Q + 2.0 * R * a) * d - R * a * a; };
    Control best{std::clamp(d0, lb, ub), 0};
    double f = value(best.a, d0);
    const double af = std::max(dp, ub);
    if (const double ff = value(af, dp); ff > f) {
        f = ff;
        best = {af, 1};
    }
    const double ab = std::min(dm, lb);
    if (const double fb = value(ab, dm); fb > f) best = {ab, -1};
    return best;
}

/// Backward march of one ybar slice in the log variable w = ln h:
///   d_t w + (Q + R w_y) w_y + R w_yy + P = 0,
/// variable-step BDF2 in time (backward Euler on the first step), the
/// policy (Howard) iteration on the w_y^2 term inside each step; central
/// differences in y, upwinded where the cell Peclet number exceeds 1.
/// At an edge the slice state ybar lies beyond, the edge value is the far-field
/// solution for the policy held constant in y outside the grid; at the other
/// edges the row is the PDE with d_yy w = 0 and a one-sided slope.
///
/// A step can be tried any number of times with different policy rows before
/// it is committed; the equilibrium sweep relies on that.
class SliceMarcher {
public:
    SliceMarcher(const GridSpec& g, const ModelParams& p, const SolveOptions& opt, std::size_t k)
        : g_(g), p_(p), opt_(opt), k_(k), ybar_(g.ybar_nodes[k]), ny_(g.ny()),
          transport_lo_(ybar_ >= g.y_nodes.front()), transport_hi_(ybar_ <= g.y_nodes.back()),
          P_(ny_), Q_(ny_), lower_(ny_), diag_(ny_), upper_(ny_), rhs_(ny_), sol_(ny_), scratch_(ny_),
          w_(ny_), w1_(ny_), w2_(ny_), base_(ny_) {}

    /// Terminal layer at t = T - eps_T for the last policy row.
    void start(const double* pi_row) {
        const std::size_t nt = g_.nt();
        const double eps = g_.T - g_.t_nodes[nt - 1];
        for (std::size_t j = 0; j < ny_; ++j) {
            w_[j] = opt_.terminal == TerminalCondition::unit ? 0.0
                                                             : log_h_constant_policy(eps, g_.y_nodes[j], ybar_, pi_row[j], p_);
        }
        lo_ = FarField{};
        hi_ = FarField{};
        if (opt_.terminal == TerminalCondition::frozen_policy) {
            lo_.start(pi_row[0], eps, p_);
            hi_.start(pi_row[ny_ - 1], eps, p_);
        } else {
            lo_.last_pi = pi_row[0];
            hi_.last_pi = pi_row[ny_ - 1];
        }
        w1_ = w_;
        n_ = nt - 1;
        tried_ = false;
    }

    /// Terminal-layer slope with pi frozen (see elasticity_constant_policy).
    [[nodiscard]] double terminal_slope(std::size_t j, const double* pi_row) const {
        return opt_.terminal == TerminalCondition::frozen_policy ? elasticity_constant_policy(ybar_, pi_row[j], p_) : 0.0;
    }

    /// ln h at the next time node down for the given policy row; not committed.
    const std::vector<double>& trial(const double* pi_row) {
        if (n_ == 0) throw OutOfGridError("slice march: already at t = 0");
        const std::size_t n = n_ - 1;
        const std::size_t nt = g_.nt();
        const double step = g_.t_nodes[n + 1] - g_.t_nodes[n];
        double a1 = 1.0, a2 = 0.0, c = 1.0;
        if (n + 2 < nt) {
            const double omega = step / (g_.t_nodes[n + 2] - g_.t_nodes[n + 1]);
            a1 = (1.0 + omega) * (1.0 + omega) / (1.0 + 2.0 * omega);
            a2 = omega * omega / (1.0 + 2.0 * omega);
            c = (1.0 + omega) / (1.0 + 2.0 * omega);
        }
        const double ck = c * step;
        for (std::size_t j = 0; j < ny_; ++j) {
            const Coefficients co = coefficients(g_.t_nodes[n], g_.y_nodes[j], ybar_, pi_row[j], p_);
            P_[j] = co.P;
            Q_[j] = co.Q;
            base_[j] = a1 * w1_[j] - a2 * w2_[j];
        }
        lo_trial_ = lo_;
        hi_trial_ = hi_;
        lo_trial_.advance(pi_row[0], step, p_);
        hi_trial_.advance(pi_row[ny_ - 1], step, p_);
        const double tau = g_.T - g_.t_nodes[n];
        const double w_lo = lo_trial_.log_h(tau, g_.y_nodes[0], ybar_, p_);
        const double w_hi = hi_trial_.log_h(tau, g_.y_nodes[ny_ - 1], ybar_, p_);
        if (!tried_) w_ = w1_;

        const double dy = g_.dy();
        const double R = 0.5 * p_.sigma_Y * p_.sigma_Y;
        const double diff = R / (dy * dy);
        std::vector<double> changes;
        for (std::size_t it = 0; it < opt_.inner_max_iters; ++it) {
            // Howard step on R w_y^2 = max_a R (2 a w_y - a^2): pick the control per node,
            // then solve the linear system it induces.
            for (std::size_t j = 1; j + 1 < ny_; ++j) {
                const Control ctl = best_control(Q_[j], R, dy, w_[j - 1], w_[j], w_[j + 1]);
                const double v = Q_[j] + 2.0 * R * ctl.a;
                double lo = diff, up = diff;
                if (ctl.stencil == 0) {
                    lo -= v / (2.0 * dy);
                    up += v / (2.0 * dy);
                } else if (ctl.stencil > 0) {
                    up += v / dy;
                } else {
                    lo -= v / dy;
                }
                lower_[j] = -ck * lo;
                upper_[j] = -ck * up;
                diag_[j] = 1.0 + ck * (lo + up);
                rhs_[j] = base_[j] + ck * (P_[j] - R * ctl.a * ctl.a);
            }
            // edge rows: d_yy w = 0 with a one-sided slope, control restricted to outflow velocities
            lower_[0] = 0.0;
            if (transport_lo_) {
                const double a = std::max((w_[1] - w_[0]) / dy, -Q_[0] / (2.0 * R));
                const double v = Q_[0] + 2.0 * R * a;
                diag_[0] = 1.0 + ck * v / dy;
                upper_[0] = -ck * v / dy;
                rhs_[0] = base_[0] + ck * (P_[0] - R * a * a);
            } else {
                diag_[0] = 1.0;
                upper_[0] = 0.0;
                rhs_[0] = w_lo;
            }
            const std::size_t e = ny_ - 1;
            upper_[e] = 0.0;
            if (transport_hi_) {
                const double a = std::min((w_[e] - w_[e - 1]) / dy, -Q_[e] / (2.0 * R));
                const double v = Q_[e] + 2.0 * R * a;
                diag_[e] = 1.0 - ck * v / dy;
                lower_[e] = ck * v / dy;
                rhs_[e] = base_[e] + ck * (P_[e] - R * a * a);
            } else {
                diag_[e] = 1.0;
                lower_[e] = 0.0;
                rhs_[e] = w_hi;
            }
            if (!solve_tridiagonal(lower_, diag_, upper_, rhs_, sol_, scratch_)) {
                throw PositivityError("h-solve: singular implicit system", n, 0, k_);
            }
            double change = 0.0;
            double scale = 1.0;
            for (std::size_t j = 0; j < ny_; ++j) {
                change = std::max(change, std::abs(sol_[j] - w_[j]));
                scale = std::max(scale, std::abs(sol_[j]));
                w_[j] = sol_[j];
            }
            changes.push_back(change);
            if (!std::isfinite(change)) break;
            if (change <= opt_.inner_tol * scale) {
                tried_ = true;
                return w_;
            }
        }
        tried_ = false;  // the next trial restarts from the committed state
        for (std::size_t j = 0; j < ny_; ++j) {
            if (!std::isfinite(w_[j])) {
                throw PositivityError("h lost positivity (ln h not finite) at t=" + std::to_string(g_.t_nodes[n]) +
                                          ", y=" + std::to_string(g_.y_nodes[j]) + ", ybar=" + std::to_string(ybar_),
                                      n, j, k_);
            }
        }
        throw ConvergenceError("h-solve: per-step fixed point did not converge at t index " + std::to_string(n) +
                                   ", slice " + std::to_string(k_),
                               changes);
    }

    /// Accept the last trial as the solution at the next node down.
    void commit() {
        if (!tried_) throw ConfigError("slice march: commit without a trial");
        w2_ = w1_;
        w1_ = w_;
        lo_ = lo_trial_;
        hi_ = hi_trial_;
        --n_;
        tried_ = false;
    }

    [[nodiscard]] std::size_t time_index() const { return n_; }
    /// ln h at the current (committed) node.
    [[nodiscard]] const std::vector<double>& current() const { return w1_; }

private:
    const GridSpec& g_;
    const ModelParams& p_;
    const SolveOptions& opt_;
    std::size_t k_;
    double ybar_;
    std::size_t ny_;
    bool transport_lo_, transport_hi_;
    std::vector<double> P_, Q_, lower_, diag_, upper_, rhs_, sol_, scratch_;
    std::vector<double> w_, w1_, w2_, base_;
    FarField lo_, hi_, lo_trial_, hi_trial_;
    std::size_t n_ = 0;
    bool tried_ = false;
};

inline void solve_slice(const PolicySurface& policy, const ModelParams& p, const SolveOptions& opt, std::size_t k,
                        HSurface& out) {
    const GridSpec& g = out.grid();
    const std::size_t nt = g.nt();
    const std::size_t ny = g.ny();
    const double* rows = policy.pi_values().data();
    SliceMarcher m(g, p, opt, k);
    m.start(rows + (nt - 1) * ny);
    for (std::size_t j = 0; j < ny; ++j) {
        out.log_value_ref(nt - 1, j, k) = m.current()[j];
        if (out.has_terminal_slope()) out.set_terminal_slope(j, k, m.terminal_slope(j, rows + (nt - 1) * ny));
    }
    for (std::size_t n = nt - 1; n-- > 0;) {
        m.trial(rows + n * ny);
        m.commit();
        for (std::size_t j = 0; j < ny; ++j) out.log_value_ref(n, j, k) = m.current()[j];
    }
}

}  // namespace detail

/// Solve the family of h^{ybar} equations for a given policy surface.
inline HSurface solve_h(const PolicySurface& policy, const ModelParams& p, const SolveOptions& opt = {}) {
    p.validate();
    const auto& gptr = policy.grid_ptr();
    if (!gptr) throw ConfigError("solve_h: empty policy surface");
    gptr->validate();
    if (std::abs(gptr->T - p.T) > 1e-12 * p.T) throw ConfigError("solve_h: grid horizon differs from model T");
    HSurface out(gptr, p.hash());
    if (opt.terminal == TerminalCondition::frozen_policy) out.allocate_terminal_slope();
    detail::parallel_for(gptr->nybar(), opt.threads, [&](std::size_t k) { detail::solve_slice(policy, p, opt, k, out); });
    return out;
}

struct ResidualNorms {
    double max_abs = 0.0;
    double rms = 0.0;
    std::size_t count = 0;
};

struct ResidualOptions {
    /// Only nodes with |ybar - y - mu_Y (T-t)| <= band_sd * sigma_Y sqrt(T-t) are scored
    /// (those carry quadrature weight); <= 0 scores every interior node.
    double band_sd = 4.0;
    /// Time nodes closer than this to the last node are skipped (transport term is singular there).
    double skip_last_time = 0.0;
    /// Nodes closer than edge_sd * sigma_Y sqrt(T-t) to a y-edge are skipped (far-field closure); 0 keeps all.
    double edge_sd = 0.0;
    /// Score w = ln h: w_t + Q w_y + R (w_yy + w_y^2) + P. Equal to the h-form divided by h for smooth
    /// h, but stays meaningful where h changes by orders of magnitude between neighbouring nodes.
    bool log_form = false;
    /// Weight each node by the conditional density of ybar given (t, y), the weight the
    /// ybar quadrature gives it, in the rms. max_abs stays unweighted.
    bool density_weight = false;
    /// Divide the log-form residual by |1 - gamma|: the error rate of ln h / (1 - gamma), the
    /// certainty-equivalent log growth the reward is built from.
    bool certainty_equivalent = false;
};

/// Central-difference residual of d_t h + Q d_y h + R d_yy h + P h, divided by h,
/// on interior (t, y) nodes. `coeff(n, j, k)` supplies the coefficients.
template <class CoeffFn>
ResidualNorms residual_with(const HSurface& h, CoeffFn&& coeff, const ModelParams& p, const ResidualOptions& opt = {}) {
    const GridSpec& g = h.grid();
    const double dy = g.dy();
    ResidualNorms out;
    double sumsq = 0.0;
    double weights = 0.0;
    for (std::size_t k = 0; k < g.nybar(); ++k) {
        for (std::size_t n = 1; n + 1 < g.nt(); ++n) {
            if (g.t_nodes.back() - g.t_nodes[n] < opt.skip_last_time) continue;
            const double k1 = g.t_nodes[n] - g.t_nodes[n - 1];
            const double k2 = g.t_nodes[n + 1] - g.t_nodes[n];
            const double tau = g.T - g.t_nodes[n];
            const double sd = p.sigma_Y * std::sqrt(tau);
            for (std::size_t j = 1; j + 1 < g.ny(); ++j) {
                if (opt.band_sd > 0.0 &&
                    std::abs(g.ybar_nodes[k] - g.y_nodes[j] - p.mu_Y * tau) > opt.band_sd * sd) {
                    continue;
                }
                if (opt.edge_sd > 0.0 && (g.y_nodes[j] - g.y_min() < opt.edge_sd * sd || g.y_max() - g.y_nodes[j] < opt.edge_sd * sd)) {
                    continue;
                }
                const double w = h.log_value(n, j, k);
                const Coefficients c = coeff(n, j, k);
                double r;
                if (opt.log_form) {
                    const double wt = -k2 / (k1 * (k1 + k2)) * h.log_value(n - 1, j, k) + (k2 - k1) / (k1 * k2) * w +
                                      k1 / (k2 * (k1 + k2)) * h.log_value(n + 1, j, k);
                    const double wy = (h.log_value(n, j + 1, k) - h.log_value(n, j - 1, k)) / (2.0 * dy);
                    const double wyy = (h.log_value(n, j + 1, k) - 2.0 * w + h.log_value(n, j - 1, k)) / (dy * dy);
                    r = wt + c.Q * wy + c.R * (wyy + wy * wy) + c.P;
                    if (opt.certainty_equivalent) r /= std::abs(1.0 - gamma_of(g.ybar_nodes[k]));
                } else {
                    const double tm = std::exp(h.log_value(n - 1, j, k) - w);
                    const double tp = std::exp(h.log_value(n + 1, j, k) - w);
                    const double ym = std::exp(h.log_value(n, j - 1, k) - w);
                    const double yp = std::exp(h.log_value(n, j + 1, k) - w);
                    const double dt_h = -k2 / (k1 * (k1 + k2)) * tm + (k2 - k1) / (k1 * k2) + k1 / (k2 * (k1 + k2)) * tp;
                    const double dy_h = (yp - ym) / (2.0 * dy);
                    const double dyy_h = (yp - 2.0 + ym) / (dy * dy);
                    r = dt_h + c.Q * dy_h + c.R * dyy_h + c.P;
                }
                if (!std::isfinite(r)) {
                    out.max_abs = std::numeric_limits<double>::infinity();
                    ++out.count;
                    continue;
                }
                out.max_abs = std::max(out.max_abs, std::abs(r));
                double wgt = 1.0;
                if (opt.density_weight) {
                    const double z = (g.ybar_nodes[k] - g.y_nodes[j] - p.mu_Y * tau) / sd;
                    wgt = std::exp(-0.5 * z * z);
                }
                sumsq += wgt * r * r;
                weights += wgt;
                ++out.count;
            }
        }
    }
    out.rms = weights > 0.0 ? std::sqrt(sumsq / weights) : 0.0;
    return out;
}

/// Residual with the coefficients induced by a policy surface.
inline ResidualNorms residual(const HSurface& h, const PolicySurface& policy, const ModelParams& p,
                              const ResidualOptions& opt = {}) {
    const GridSpec& g = h.grid();
    if (!g.same_shape(policy.grid())) throw ConfigError("residual: h and policy live on different grids");
    return residual_with(
        h,
        [&](std::size_t n, std::size_t j, std::size_t k) {
            return coefficients(g.t_nodes[n], g.y_nodes[j], g.ybar_nodes[k], policy.pi(n, j), p);
        },
        p, opt);
}

}  // namespace prefhedge
