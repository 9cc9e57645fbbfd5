// ============================================================================
// errors.hpp — exception taxonomy shared by all modules
//
//   ConfigError          invalid user-facing configuration (bad dimension,
//                        empty sources, non-positive tolerances, ...)
//   NumericError         a numerical procedure failed structurally
//                        (root not bracketed, residual not met, ...)
//   IoError              file I/O failure, message carries the path
//   NonConvergenceError  iteration cap exceeded before the stop criterion;
//                        carries residual diagnostics so callers can report
//                        how far the run got
// ============================================================================
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace sandpile {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class NonConvergenceError : public std::runtime_error {
public:
    NonConvergenceError(const std::string& msg, double residual_excess,
                        std::uint64_t topplings)
        : std::runtime_error(msg),
          residual_excess(residual_excess),
          topplings(topplings) {}

    double residual_excess;   // max site excess when the cap was hit
    std::uint64_t topplings;  // toppling events performed before giving up
};

}  // namespace sandpile
