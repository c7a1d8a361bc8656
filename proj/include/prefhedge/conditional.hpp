#pragma once

#include <cmath>
#include <numbers>

#include "prefhedge/errors.hpp"
#include "prefhedge/model.hpp"

namespace prefhedge {

// Law of Y_T given Y_t = y:  N(y + mu_Y (T - t), sigma_Y^2 (T - t)).
// Conditioning on Y_T = ybar turns Y into a Brownian bridge and adds the
// correlated part of the score to the wealth drift.

namespace detail {
inline double remaining(double s, const ModelParams& p, const char* who) {
    const double tau = p.T - s;
    if (!(tau > 0.0)) throw DegenerateTimeError(std::string(who) + ": conditional law degenerates at s = T");
    return tau;
}
}  // namespace detail

/// State the conditional measure P_{t,x,y,ybar} is anchored to.
struct ConditionalLaw {
    double t;
    double y;
    double ybar;
    const ModelParams* params;

    ConditionalLaw(double t, double y, double ybar, const ModelParams& p)
        : t(t), y(y), ybar(ybar), params(&p) {
        detail::remaining(t, p, "ConditionalLaw");
    }

    [[nodiscard]] double mean() const { return y + params->mu_Y * (params->T - t); }
    [[nodiscard]] double stddev() const { return params->sigma_Y * std::sqrt(params->T - t); }
};

inline double conditional_mean(double t, double y, const ModelParams& p) {
    return y + p.mu_Y * (p.T - t);
}

inline double conditional_stddev(double t, const ModelParams& p) {
    return p.sigma_Y * std::sqrt(detail::remaining(t, p, "conditional_stddev"));
}

/// Gaussian transition density f_{Y_T}(ybar; t, y).
inline double conditional_density(double ybar, double t, double y, const ModelParams& p) {
    const double tau = detail::remaining(t, p, "conditional_density");
    const double var = p.sigma_Y * p.sigma_Y * tau;
    const double d = ybar - y - p.mu_Y * tau;
    return std::exp(-0.5 * d * d / var) / std::sqrt(2.0 * std::numbers::pi * var);
}

/// d/dy ln f_{Y_T}(ybar; s, y).
///
/// Sign note: the textbook derivation of the bridge drift needs
/// +(ybar - y - mu_Y (T-s)) / (sigma_Y^2 (T-s)); a leading minus sign would
/// push the bridge away from ybar. This is the exact derivative of the
/// Gaussian log-density in y.
inline double score(double s, double y, double ybar, const ModelParams& p) {
    const double tau = detail::remaining(s, p, "score");
    return (ybar - y - p.mu_Y * tau) / (p.sigma_Y * p.sigma_Y * tau);
}

/// Drift of Y under the conditional measure: (ybar - y)/(T - s).
inline double bridge_drift_y(double s, double y, double ybar, const ModelParams& p) {
    const double tau = detail::remaining(s, p, "bridge_drift_y");
    return (ybar - y) / tau;
}

/// Wealth drift under the conditional measure.
inline double conditioned_wealth_drift(double s, double x, double y, double ybar, double pi,
                                       const ModelParams& p) {
    const double tau = detail::remaining(s, p, "conditioned_wealth_drift");
    if (!(x > 0.0)) throw DomainError("wealth must be positive");
    const double adjustment = pi * p.rho * (p.sigma_S / p.sigma_Y) * (ybar - y - p.mu_Y * tau) / tau;
    return x * (p.r + pi * (p.mu_S - p.r) + adjustment);
}

/// Unconditional wealth drift x (r + pi (mu_S - r)).
inline double wealth_drift(double x, double pi, const ModelParams& p) {
    return x * (p.r + pi * (p.mu_S - p.r));
}

}  // namespace prefhedge
