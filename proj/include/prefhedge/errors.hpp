#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace prefhedge {

/// Argument outside the mathematical domain of an operation (x <= 0, (1-g)u <= 0, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Risk aversion too close to the log-utility point g = 1.
class SingularGammaError : public DomainError {
public:
    using DomainError::DomainError;
};

/// Conditional-law quantity requested at s = T where the law degenerates.
class DegenerateTimeError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

class OutOfGridError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

/// Invalid configuration or parameter set; the message names the violated invariant.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// The h-surface lost positivity (ln h became non-finite) at a grid node.
class PositivityError : public std::runtime_error {
public:
    PositivityError(const std::string& what, std::size_t t_index, std::size_t y_index,
                    std::size_t ybar_index)
        : std::runtime_error(what), t_index(t_index), y_index(y_index), ybar_index(ybar_index) {}

    std::size_t t_index;
    std::size_t y_index;
    std::size_t ybar_index;
};

/// An iterative procedure stopped without meeting its tolerance.
class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, std::vector<double> history)
        : std::runtime_error(what), history(std::move(history)) {}

    /// Sup-norm change (or residual) per iteration.
    std::vector<double> history;
};

/// Persisted file unreadable: bad magic, version, dims, checksum or params hash.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace prefhedge
