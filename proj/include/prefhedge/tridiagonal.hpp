#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace prefhedge {

/// Thomas algorithm for  lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = rhs[i].
///
/// lower[0] and upper[n-1] are ignored. `scratch` must hold n values.
/// Returns false on a zero pivot; no pivoting is done, so the matrix should be
/// diagonally dominant (the implicit operators built here are M-matrices).
inline bool solve_tridiagonal(std::span<const double> lower, std::span<const double> diag,
                              std::span<const double> upper, std::span<const double> rhs,
                              std::span<double> x, std::span<double> scratch) {
    const std::size_t n = diag.size();
    if (n == 0) return true;
    if (lower.size() != n || upper.size() != n || rhs.size() != n || x.size() != n || scratch.size() < n) {
        throw std::invalid_argument("solve_tridiagonal: size mismatch");
    }
    double beta = diag[0];
    if (beta == 0.0) return false;
    x[0] = rhs[0] / beta;
    for (std::size_t i = 1; i < n; ++i) {
        scratch[i] = upper[i - 1] / beta;
        beta = diag[i] - lower[i] * scratch[i];
        if (beta == 0.0 || !std::isfinite(beta)) return false;
        x[i] = (rhs[i] - lower[i] * x[i - 1]) / beta;
    }
    for (std::size_t i = n - 1; i-- > 0;) x[i] -= scratch[i + 1] * x[i + 1];
    return true;
}

}  // namespace prefhedge
