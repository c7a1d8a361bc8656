#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>

#include "prefhedge/errors.hpp"

namespace prefhedge {

/// Risk aversion closer than this to 1 is rejected by every utility operation.
inline constexpr double kEpsGamma = 1e-8;

/// Market, preference-process and horizon coefficients.
///
///   dX = X (r + pi (mu_S - r)) dt + X pi sigma_S (rho dB1 + sqrt(1 - rho^2) dB2)
///   dY = mu_Y dt + sigma_Y dB1,   gamma = exp(Y_T)
struct ModelParams {
    double r = 0.02;
    double mu_S = 0.07;
    double sigma_S = 0.2;
    double rho = 0.0;
    double mu_Y = 0.02;
    double sigma_Y = 0.04;
    double T = 40.0;
    double y0 = 0.69314718055994530942;  // ln 2

    /// Throws ConfigError naming the first violated invariant.
    void validate() const {
        auto finite = [](double v) { return std::isfinite(v); };
        if (!finite(r) || !finite(mu_S) || !finite(sigma_S) || !finite(rho) || !finite(mu_Y) ||
            !finite(sigma_Y) || !finite(T) || !finite(y0)) {
            throw ConfigError("model parameters must be finite");
        }
        if (!(sigma_S > 0.0)) throw ConfigError("invariant violated: sigma_S > 0");
        if (!(sigma_Y > 0.0)) throw ConfigError("invariant violated: sigma_Y > 0");
        if (!(T > 0.0)) throw ConfigError("invariant violated: T > 0");
        if (!(rho >= -1.0 && rho <= 1.0)) throw ConfigError("invariant violated: -1 <= rho <= 1");
    }

    /// FNV-1a over the raw bytes of the parameter tuple; stamps persisted surfaces.
    [[nodiscard]] std::uint64_t hash() const {
        const double fields[] = {r, mu_S, sigma_S, rho, mu_Y, sigma_Y, T, y0};
        std::uint64_t h = 1469598103934665603ULL;
        for (double f : fields) {
            unsigned char bytes[sizeof(double)];
            std::memcpy(bytes, &f, sizeof(double));
            for (unsigned char b : bytes) {
                h ^= b;
                h *= 1099511628211ULL;
            }
        }
        return h;
    }
};

/// Preference state and the risk aversion it induces, gamma = e^{ybar}.
struct RiskAversion {
    double ybar = 0.0;
    double gamma = 1.0;

    static RiskAversion from_state(double ybar) { return {ybar, std::exp(ybar)}; }
};

inline double gamma_of(double ybar) { return std::exp(ybar); }

namespace detail {
inline void require_regular_gamma(double gamma) {
    if (!(gamma > 0.0)) throw DomainError("risk aversion must be positive");
    if (std::abs(gamma - 1.0) <= kEpsGamma) {
        throw SingularGammaError("risk aversion within eps_gamma of 1 (log utility excluded)");
    }
}
inline void require_utility_domain(double u, double gamma) {
    require_regular_gamma(gamma);
    if (!((1.0 - gamma) * u > 0.0)) throw DomainError("utility value outside the range of CRRA: (1-gamma) u <= 0");
}
}  // namespace detail

/// CRRA utility x^{1-g}/(1-g).
inline double crra_utility(double x, double gamma) {
    if (!(x > 0.0)) throw DomainError("wealth must be positive");
    detail::require_regular_gamma(gamma);
    return std::pow(x, 1.0 - gamma) / (1.0 - gamma);
}

/// Certainty equivalent ((1-g) u)^{1/(1-g)}.
inline double inverse_crra(double u, double gamma) {
    detail::require_utility_domain(u, gamma);
    return std::pow((1.0 - gamma) * u, 1.0 / (1.0 - gamma));
}

/// ln of the certainty equivalent: ln((1-g) u)/(1-g).
///
/// Written with the product inside the log so it is defined for g > 1, where
/// both 1-g and u are negative.
inline double phi(double u, double gamma) {
    detail::require_utility_domain(u, gamma);
    return std::log((1.0 - gamma) * u) / (1.0 - gamma);
}

inline double phi_prime(double u, double gamma) {
    detail::require_utility_domain(u, gamma);
    return 1.0 / (u * (1.0 - gamma));
}

/// E[exp(Y_T) | Y_t = y] for the arithmetic Brownian preference factor.
inline double expected_terminal_gamma(double t, double y, const ModelParams& p) {
    if (!(t >= 0.0 && t <= p.T)) throw DomainError("expected_terminal_gamma: t outside [0, T]");
    const double tau = p.T - t;
    return std::exp(y + p.mu_Y * tau + 0.5 * p.sigma_Y * p.sigma_Y * tau);
}

}  // namespace prefhedge
