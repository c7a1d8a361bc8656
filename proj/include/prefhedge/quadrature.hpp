#pragma once

#include <Eigen/Eigenvalues>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace prefhedge {

/// Gauss-Hermite rule standardized to the normal law:
///   E[f(m + s Z)] ~ sum_k weights[k] f(m + sqrt(2) s nodes[k]),  sum weights = 1.
struct GaussHermite {
    std::vector<double> nodes;    // roots of the physicists' Hermite polynomial H_n
    std::vector<double> weights;  // Gauss weights divided by sqrt(pi)

    [[nodiscard]] std::size_t size() const { return nodes.size(); }

    /// Map node k to a point of N(mean, sd^2).
    [[nodiscard]] double point(std::size_t k, double mean, double sd) const {
        return mean + std::numbers::sqrt2 * sd * nodes[k];
    }
};

namespace detail {

/// Orthonormal Hermite functions p_0..p_n at x for the weight exp(-x^2)/sqrt(pi):
/// x p_k = b_{k+1} p_{k+1} + b_k p_{k-1}, b_k = sqrt(k / 2).
/// Returns p_n, its derivative sqrt(2n) p_{n-1}, and sum_{k<n} p_k^2.
struct HermiteEval {
    double p_n;
    double dp_n;
    double christoffel;
};

inline HermiteEval hermite_eval(std::size_t n, double x) {
    double prev = 0.0;
    double cur = 1.0;
    double sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        sum += cur * cur;
        const double bk = std::sqrt(static_cast<double>(k) / 2.0);
        const double bk1 = std::sqrt(static_cast<double>(k + 1) / 2.0);
        const double next = (x * cur - bk * prev) / bk1;
        prev = cur;
        cur = next;
    }
    return {cur, std::sqrt(2.0 * static_cast<double>(n)) * prev, sum};
}

}  // namespace detail

/// Golub-Welsch for starting values, then Newton on the orthonormal recurrence
/// for the nodes and the Christoffel sum for the weights; eigenvector
/// components lose relative accuracy on the tiny tail weights.
inline GaussHermite gauss_hermite(std::size_t n) {
    if (n == 0) throw std::invalid_argument("gauss_hermite: order must be >= 1");
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t i = 1; i < n; ++i) {
        const double b = std::sqrt(static_cast<double>(i) / 2.0);
        jacobi(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i - 1)) = b;
        jacobi(static_cast<Eigen::Index>(i - 1), static_cast<Eigen::Index>(i)) = b;
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi, Eigen::EigenvaluesOnly);
    GaussHermite rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        double x = solver.eigenvalues()(static_cast<Eigen::Index>(k));
        for (int it = 0; it < 3; ++it) {
            const detail::HermiteEval e = detail::hermite_eval(n, x);
            x -= e.p_n / e.dp_n;
        }
        rule.nodes[k] = x;
    }
    // symmetric rule: mirror pairs exactly, middle node exactly zero for odd n
    for (std::size_t k = 0; k < n / 2; ++k) {
        const double a = 0.5 * (rule.nodes[n - 1 - k] - rule.nodes[k]);
        rule.nodes[k] = -a;
        rule.nodes[n - 1 - k] = a;
    }
    if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        rule.weights[k] = 1.0 / detail::hermite_eval(n, rule.nodes[k]).christoffel;
        total += rule.weights[k];
    }
    for (double& w : rule.weights) w /= total;
    return rule;
}

}  // namespace prefhedge
