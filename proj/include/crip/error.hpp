#pragma once

#include <stdexcept>
#include <string>

namespace crip {

/// Violated precondition or invalid parameter.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Iterative solver failed to reach its tolerance.
class SolverError : public std::runtime_error {
public:
    SolverError(const std::string& what, double residual)
        : std::runtime_error(what + " (relative residual " + std::to_string(residual) + ")"),
          residual_(residual) {}

    double residual() const noexcept { return residual_; }

private:
    double residual_;
};

inline void require(bool ok, const std::string& message) {
    if (!ok) throw InvalidArgument(message);
}

}  // namespace crip
