#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace projmeas {

/// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Input file or scenario text could not be parsed; line is 1-based.
struct ParseError : Error {
    int line;
    ParseError(int line_, const std::string& msg)
        : Error("parse error at line " + std::to_string(line_) + ": " + msg), line(line_) {}
};

/// Operand dimensions are incompatible.
struct DimensionError : Error {
    using Error::Error;
};

/// Ensemble or operand failed a validity precondition (weights, invertibility, ...).
struct ValidationError : Error {
    using Error::Error;
};

/// A subspace handed to restrict/quotient is not invariant under every atom.
struct NotInvariantError : Error {
    double max_residual;
    int atom_index;
    NotInvariantError(double residual, int atom)
        : Error("subspace is not invariant: relative residual " + std::to_string(residual) +
                " at atom " + std::to_string(atom)),
          max_residual(residual), atom_index(atom) {}
};

/// A float-mode rank decision fell inside the ambiguous band around the cutoff.
/// Callers should rerun the computation in exact-rational mode.
struct ToleranceAmbiguityError : Error {
    double ratio;  // singular value over the largest one
    explicit ToleranceAmbiguityError(double ratio_)
        : Error("rank decision is ambiguous (relative singular value " + std::to_string(ratio_) +
                " sits inside the guard band); switch to exact-rational mode"),
          ratio(ratio_) {}
};

/// The orthonormal frame collapsed during spectrum estimation.
struct DegenerateFrameError : Error {
    using Error::Error;
};

/// Recurrence probe preconditions: the two blocks have statistically different
/// top exponents, so the ratio series is not expected to be recurrent.
struct ExponentMismatchError : Error {
    double value_a, value_b;
    ExponentMismatchError(double a, double b)
        : Error("top exponents differ beyond the tie rule: " + std::to_string(a) + " vs " +
                std::to_string(b)),
          value_a(a), value_b(b) {}
};

/// The return-time resampler walked past its step cap without hitting the
/// identity label.
struct TimeoutNoReturnError : Error {
    std::uint64_t steps;
    explicit TimeoutNoReturnError(std::uint64_t steps_)
        : Error("no return to the identity label within " + std::to_string(steps_) + " steps"),
          steps(steps_) {}
};

/// The classifier labels fail to compose consistently on sampled pairs.
struct ClassifierInconsistentError : Error {
    using Error::Error;
};

}  // namespace projmeas
