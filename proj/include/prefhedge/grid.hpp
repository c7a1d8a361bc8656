#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "prefhedge/errors.hpp"
#include "prefhedge/model.hpp"
#include "prefhedge/quadrature.hpp"

namespace prefhedge {

/// Discretization of the (t, y) domain plus the terminal-state slices.
///
/// Each ybar slice carries its own h-surface; the hedging integral at (t, y)
/// evaluates the slices at Gauss-Hermite points of the conditional law of
/// Y_T and interpolates between slices.
struct GridSpec {
    std::vector<double> t_nodes;     // ascending, last node = T - eps_T
    std::vector<double> y_nodes;     // uniform
    std::vector<double> ybar_nodes;  // uniform slice states, none within 1e-8 of 0
    GaussHermite quadrature;         // standardized rule for the ybar integral
    double eps_T = 0.0;
    double T = 0.0;

    [[nodiscard]] std::size_t nt() const { return t_nodes.size(); }
    [[nodiscard]] std::size_t ny() const { return y_nodes.size(); }
    [[nodiscard]] std::size_t nybar() const { return ybar_nodes.size(); }
    [[nodiscard]] double dy() const { return y_nodes[1] - y_nodes[0]; }
    [[nodiscard]] double dybar() const { return nybar() > 1 ? ybar_nodes[1] - ybar_nodes[0] : 1.0; }
    [[nodiscard]] double y_min() const { return y_nodes.front(); }
    [[nodiscard]] double y_max() const { return y_nodes.back(); }

    [[nodiscard]] bool same_shape(const GridSpec& o) const {
        return t_nodes == o.t_nodes && y_nodes == o.y_nodes && ybar_nodes == o.ybar_nodes &&
               quadrature.nodes == o.quadrature.nodes && eps_T == o.eps_T && T == o.T;
    }

    /// Throws ConfigError naming the violated invariant.
    void validate() const {
        if (!(T > 0.0)) throw ConfigError("grid: T > 0");
        if (!(eps_T > 0.0)) throw ConfigError("grid: eps_T > 0");
        if (t_nodes.size() < 2) throw ConfigError("grid: at least two time nodes");
        if (y_nodes.size() < 5) throw ConfigError("grid: at least five y nodes");
        if (ybar_nodes.empty()) throw ConfigError("grid: at least one ybar slice");
        if (quadrature.size() == 0) throw ConfigError("grid: empty ybar quadrature");
        for (std::size_t i = 1; i < t_nodes.size(); ++i) {
            if (!(t_nodes[i] > t_nodes[i - 1])) throw ConfigError("grid: t_nodes strictly increasing");
        }
        if (t_nodes.front() < 0.0) throw ConfigError("grid: t_nodes >= 0");
        if (t_nodes.back() > T - eps_T + 1e-12 * T) throw ConfigError("grid: last t node <= T - eps_T");
        const double h = dy();
        if (!(h > 0.0)) throw ConfigError("grid: y_nodes strictly increasing");
        for (std::size_t j = 1; j < y_nodes.size(); ++j) {
            if (std::abs((y_nodes[j] - y_nodes[j - 1]) - h) > 1e-9 * std::max(1.0, std::abs(h))) {
                throw ConfigError("grid: y_nodes uniformly spaced");
            }
        }
        for (std::size_t k = 1; k < ybar_nodes.size(); ++k) {
            if (!(ybar_nodes[k] > ybar_nodes[k - 1])) throw ConfigError("grid: ybar_nodes strictly increasing");
        }
        for (double yb : ybar_nodes) {
            if (std::abs(yb) <= kEpsGamma) throw ConfigError("grid: no ybar node within 1e-8 of 0 (gamma = 1 excluded)");
        }
    }
};

/// Knobs for the default grid.
struct GridSettings {
    std::size_t n_t = 400;       // time steps (nodes = n_t + 1)
    std::size_t n_y = 241;
    std::size_t n_ybar = 41;     // h slices
    std::size_t gh_order = 21;   // quadrature nodes per (t, y)
    double eps_T_frac = 1e-3;    // eps_T = eps_T_frac * T
    double width_sd = 6.0;       // y half-width around y0 + mu_Y T, in units of sigma_Y sqrt(T)
    double ybar_margin_sd = 5.0; // slice range beyond the reachable conditional means
    std::optional<double> y_min;
    std::optional<double> y_max;
    std::vector<double> cover_y; // extra states that must lie cover_margin_sd inside the grid
    double cover_margin_sd = 1.0;
    // Bridges from a cover state head for slices near its terminal law, so that law
    // (c + mu_Y T, this many sd either side) must fit too or the edge leaks inward.
    double cover_terminal_sd = 3.0;
};

/// Nudge a slice state off the excluded g = 1 point.
inline double nudge_from_unit_gamma(double ybar, double spacing) {
    if (std::abs(ybar) > kEpsGamma) return ybar;
    return 1e-6 * std::max(spacing, 1e-3);
}

inline GridSpec make_grid(const ModelParams& p, const GridSettings& s = {}) {
    p.validate();
    if (s.n_t < 1 || s.n_y < 5 || s.n_ybar < 1 || s.gh_order < 1) throw ConfigError("grid: sizes too small");
    if (!(s.eps_T_frac > 0.0 && s.eps_T_frac < 1.0)) throw ConfigError("grid: 0 < eps_T_frac < 1");
    if (!(s.width_sd > 0.0) || !(s.cover_margin_sd >= 0.0) || !(s.cover_terminal_sd >= 0.0) || !(s.ybar_margin_sd >= 0.0))
        throw ConfigError("grid: widths must be positive");

    GridSpec g;
    g.T = p.T;
    g.eps_T = s.eps_T_frac * p.T;
    const double t_end = p.T - g.eps_T;
    g.t_nodes.resize(s.n_t + 1);
    for (std::size_t n = 0; n <= s.n_t; ++n) g.t_nodes[n] = t_end * static_cast<double>(n) / static_cast<double>(s.n_t);
    g.t_nodes.back() = t_end;

    const double sd = p.sigma_Y * std::sqrt(p.T);
    // Wider domains reach states where the policy is large and ln h is dominated by
    // rare excursions (h itself is infinite on the whole line), so stay narrow.
    const double centre = p.y0 + p.mu_Y * p.T;
    double lo = centre - s.width_sd * sd;
    double hi = centre + s.width_sd * sd;
    for (double c : s.cover_y) {
        lo = std::min(lo, c - s.cover_margin_sd * sd);
        hi = std::max(hi, c + s.cover_margin_sd * sd);
        lo = std::min(lo, c + p.mu_Y * p.T - s.cover_terminal_sd * sd);
        hi = std::max(hi, c + p.mu_Y * p.T + s.cover_terminal_sd * sd);
    }
    if (s.y_min) lo = *s.y_min;
    if (s.y_max) hi = *s.y_max;
    if (!(hi > lo)) throw ConfigError("grid: y_max > y_min");
    g.y_nodes.resize(s.n_y);
    for (std::size_t j = 0; j < s.n_y; ++j) g.y_nodes[j] = lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(s.n_y - 1);

    // Conditional means y + mu_Y (T - t) over the grid, widened by the margin.
    const double bar_lo = lo + std::min(0.0, p.mu_Y * p.T) - s.ybar_margin_sd * sd;
    const double bar_hi = hi + std::max(0.0, p.mu_Y * p.T) + s.ybar_margin_sd * sd;
    g.ybar_nodes.resize(s.n_ybar);
    if (s.n_ybar == 1) {
        g.ybar_nodes[0] = nudge_from_unit_gamma(0.5 * (bar_lo + bar_hi), bar_hi - bar_lo);
    } else {
        const double step = (bar_hi - bar_lo) / static_cast<double>(s.n_ybar - 1);
        for (std::size_t k = 0; k < s.n_ybar; ++k) {
            g.ybar_nodes[k] = nudge_from_unit_gamma(bar_lo + step * static_cast<double>(k), step);
        }
    }
    g.quadrature = gauss_hermite(s.gh_order);
    g.validate();
    return g;
}

namespace detail {
/// Index i with nodes[i] <= x <= nodes[i+1] (clamped) and the weight of nodes[i+1].
inline std::pair<std::size_t, double> bracket(const std::vector<double>& nodes, double x) {
    const std::size_t n = nodes.size();
    if (n == 1) return {0, 0.0};
    if (x <= nodes.front()) return {0, 0.0};
    if (x >= nodes.back()) return {n - 2, 1.0};
    const auto it = std::upper_bound(nodes.begin(), nodes.end(), x);
    const std::size_t i = static_cast<std::size_t>(it - nodes.begin()) - 1;
    return {i, (x - nodes[i]) / (nodes[i + 1] - nodes[i])};
}

/// Same as bracket() for a uniform axis, O(1).
inline std::pair<std::size_t, double> bracket_uniform(double first, double step, std::size_t n, double x) {
    if (n == 1) return {0, 0.0};
    const double u = (x - first) / step;
    if (u <= 0.0) return {0, 0.0};
    if (u >= static_cast<double>(n - 1)) return {n - 2, 1.0};
    const auto i = static_cast<std::size_t>(u);
    if (i >= n - 1) return {n - 2, 1.0};
    return {i, u - static_cast<double>(i)};
}

/// Catmull-Rom interpolation of values sampled on a uniform axis; clamped outside.
template <class ValueAt>
double catmull_rom(double first, double step, std::size_t n, double x, ValueAt&& value) {
    if (n == 1) return value(0);
    const double u = (x - first) / step;
    if (u <= 0.0) return value(0);
    if (u >= static_cast<double>(n - 1)) return value(n - 1);
    auto i = static_cast<std::size_t>(u);
    if (i >= n - 1) i = n - 2;
    const double f = u - static_cast<double>(i);
    const double p1 = value(i);
    const double p2 = value(i + 1);
    const double p0 = i > 0 ? value(i - 1) : 2.0 * p1 - p2;
    const double p3 = i + 2 < n ? value(i + 2) : 2.0 * p2 - p1;
    return p1 + 0.5 * f * (p2 - p0 + f * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3 + f * (3.0 * (p1 - p2) + p3 - p0)));
}
}  // namespace detail

}  // namespace prefhedge
