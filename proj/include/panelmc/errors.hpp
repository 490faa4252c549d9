#pragma once

#include <stdexcept>
#include <string>

namespace panelmc {

// Dimension disagreement between a matrix and a mask (or two matrices).
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Invalid configuration or argument values (negative tolerance, |rho| >= 1, ...).
struct InvalidSpecError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Empty or degenerate observation set where at least one observed cell is required.
struct MaskError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Estimator cannot be applied to this mask / data shape at all.
struct InfeasibleError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Design is singular or too ill-conditioned for an unregularized solve.
struct IllPosedError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed input file; message carries the offending line number when known.
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace panelmc
