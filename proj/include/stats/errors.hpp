#pragma once

#include <stdexcept>
#include <string>

namespace stats {

/// Raised when a caller breaks an operation's precondition (shape mismatch,
/// out-of-range step index, invalid bounds, ...).
class ContractViolation : public std::invalid_argument {
public:
    explicit ContractViolation(const std::string& what) : std::invalid_argument(what) {}
};

/// A non-finite value appeared, or a function was evaluated outside its domain.
/// `op()` names the operation that produced it.
class NumericFailure : public std::runtime_error {
public:
    NumericFailure(std::string op, const std::string& what)
        : std::runtime_error(op + ": " + what), op_(std::move(op)) {}
    const std::string& op() const noexcept { return op_; }

private:
    std::string op_;
};

/// Spectral mass is undefined for a signal with zero total power.
class DegenerateSpectrum : public std::runtime_error {
public:
    explicit DegenerateSpectrum(const std::string& what) : std::runtime_error(what) {}
};

/// A bound's hypothesis (e.g. alpha_bar inside [a, 1-a]) does not hold.
class PreconditionViolation : public std::runtime_error {
public:
    explicit PreconditionViolation(const std::string& what) : std::runtime_error(what) {}
};

/// Training aborted: loss blew past the divergence threshold or a gradient went NaN.
class TrainingAborted : public std::runtime_error {
public:
    explicit TrainingAborted(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed input file or configuration.
class InputError : public std::runtime_error {
public:
    explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace stats
