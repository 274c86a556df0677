#pragma once

#include "gtp/numerics/tape.hpp"

#include <functional>
#include <vector>

namespace gtp::num {

using ScalarFunction = std::function<Var(Tape&, const std::vector<Var>& leaves)>;

struct GradCheckReport {
    /// Per leaf: max |analytic − numeric| / max(‖analytic‖∞, ‖numeric‖∞).
    std::vector<double> leaf_errors;
    double max_relative_error = 0.0;
    bool passed = false;
};

/// Compares tape gradients of a scalar function against central differences
/// with step h. Each evaluation uses a fresh tape.
GradCheckReport grad_check(const ScalarFunction& f, const std::vector<Tensor>& leaves, double h, double tol);

} // namespace gtp::num
