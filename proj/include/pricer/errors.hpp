#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pricer {

/// Local-volatility (Dupire) or market-price-of-risk evaluation hit a
/// degenerate point; carries the offending price.
class SingularityError : public std::runtime_error {
public:
    SingularityError(const std::string& what, double at_price)
        : std::runtime_error(what + " (at s=" + std::to_string(at_price) + ")"),
          at_price_(at_price) {}

    double at_price() const { return at_price_; }

private:
    double at_price_;
};

/// Wealth recursion crossed the positivity floor; carries the step index.
class KernelDegeneracyError : public std::runtime_error {
public:
    KernelDegeneracyError(const std::string& what, std::size_t step)
        : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}

    std::size_t step() const { return step_; }

private:
    std::size_t step_;
};

/// Price-file ingestion failure; carries the 1-based line number.
class IngestionError : public std::runtime_error {
public:
    IngestionError(const std::string& what, std::size_t line)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

/// Input has the wrong dimension (network input, gradient length, ...).
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A container is too small or empty for the requested operation.
class SizeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Implied-vol target price is outside the no-arbitrage bounds or the
/// solver bracket.
class NoSolutionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss; carries episode and window indices.
class TrainingDivergedError : public std::runtime_error {
public:
    TrainingDivergedError(const std::string& what, std::size_t episode, std::size_t window)
        : std::runtime_error(what + " (episode " + std::to_string(episode) + ", window " +
                             std::to_string(window) + ")"),
          episode_(episode), window_(window) {}

    std::size_t episode() const { return episode_; }
    std::size_t window() const { return window_; }

private:
    std::size_t episode_;
    std::size_t window_;
};

} // namespace pricer
