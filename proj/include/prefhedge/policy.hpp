#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "prefhedge/errors.hpp"
#include "prefhedge/grid.hpp"

namespace prefhedge {

struct IterationMeta {
    std::size_t iterations = 0;
    double final_change = 0.0;
    double final_damping = 1.0;
    std::vector<double> history;  // sup-norm change per Picard iteration
};

/// Risky fraction pi(t, y) on the (t, y) nodes of a grid, split into the
/// myopic (Merton-type) demand and the preference-hedging demand.
///
/// There is no wealth axis: the equilibrium fraction does not depend on x.
class PolicySurface {
public:
    PolicySurface() = default;
    explicit PolicySurface(std::shared_ptr<const GridSpec> grid)
        : grid_(std::move(grid)),
          pi_(grid_->nt() * grid_->ny(), 0.0),
          myopic_(pi_.size(), 0.0),
          hedging_(pi_.size(), 0.0) {}

    static PolicySurface constant(std::shared_ptr<const GridSpec> grid, double value) {
        PolicySurface s(std::move(grid));
        for (std::size_t i = 0; i < s.pi_.size(); ++i) {
            s.myopic_[i] = value;
            s.pi_[i] = value;
        }
        return s;
    }

    [[nodiscard]] const GridSpec& grid() const { return *grid_; }
    [[nodiscard]] const std::shared_ptr<const GridSpec>& grid_ptr() const { return grid_; }
    [[nodiscard]] bool empty() const { return !grid_; }

    [[nodiscard]] std::size_t index(std::size_t n, std::size_t j) const { return n * grid_->ny() + j; }

    [[nodiscard]] double pi(std::size_t n, std::size_t j) const { return pi_[index(n, j)]; }
    [[nodiscard]] double myopic(std::size_t n, std::size_t j) const { return myopic_[index(n, j)]; }
    [[nodiscard]] double hedging(std::size_t n, std::size_t j) const { return hedging_[index(n, j)]; }

    /// Stores both components; pi is their sum.
    void set(std::size_t n, std::size_t j, double myopic, double hedging) {
        const std::size_t i = index(n, j);
        myopic_[i] = myopic;
        hedging_[i] = hedging;
        pi_[i] = myopic + hedging;
    }

    [[nodiscard]] const std::vector<double>& pi_values() const { return pi_; }
    [[nodiscard]] const std::vector<double>& myopic_values() const { return myopic_; }
    [[nodiscard]] const std::vector<double>& hedging_values() const { return hedging_; }

    IterationMeta meta;

    /// Bilinear interpolation of pi. Outside the y-hull the edge value is used;
    /// on [T - eps_T, T) the last time slice is held.
    [[nodiscard]] double at(double t, double y) const { return interpolate(pi_, t, y); }
    [[nodiscard]] double myopic_at(double t, double y) const { return interpolate(myopic_, t, y); }
    [[nodiscard]] double hedging_at(double t, double y) const { return interpolate(hedging_, t, y); }
    double operator()(double t, double y) const { return at(t, y); }

    [[nodiscard]] double sup_distance(const PolicySurface& other) const {
        double d = 0.0;
        for (std::size_t i = 0; i < pi_.size(); ++i) d = std::max(d, std::abs(pi_[i] - other.pi_[i]));
        return d;
    }

private:
    [[nodiscard]] double interpolate(const std::vector<double>& v, double t, double y) const {
        const GridSpec& g = *grid_;
        if (!(t >= g.t_nodes.front() - 1e-12 && t < g.T) || !std::isfinite(y)) {
            throw OutOfGridError("policy evaluated outside [t_0, T) or at a non-finite state");
        }
        const auto [n, ft] = detail::bracket(g.t_nodes, t);
        const auto [j, fy] = detail::bracket_uniform(g.y_nodes.front(), g.dy(), g.ny(), y);
        const double a = v[index(n, j)] * (1.0 - fy) + v[index(n, j + 1)] * fy;
        const double b = v[index(n + 1, j)] * (1.0 - fy) + v[index(n + 1, j + 1)] * fy;
        return a * (1.0 - ft) + b * ft;
    }

    std::shared_ptr<const GridSpec> grid_;
    std::vector<double> pi_;
    std::vector<double> myopic_;
    std::vector<double> hedging_;
};

/// pi(t, y) = value everywhere; used for oracles and spike windows.
struct ConstantPolicy {
    double value;
    double operator()(double /*t*/, double /*y*/) const { return value; }
};

}  // namespace prefhedge
