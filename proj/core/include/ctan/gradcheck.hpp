#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ctan/ops.hpp"

namespace cta {

/// Relative error as |a - g| / max(1e-8, |a| + |g|).
inline double grad_rel_err(double a, double g) {
    return std::abs(a - g) / std::max(1e-8, std::abs(a) + std::abs(g));
}

inline constexpr double kGradCheckStep = 1e-4;
inline constexpr double kGradCheckTolerance = 1e-4;

struct OpReport {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = false;
};

/// A double-precision check case: `build` assembles a scalar loss from the
/// leaf inputs on the given tape. The tape gradient of every input element is
/// compared against expected_scale times the central finite difference of the
/// built loss (expected_scale lets the reversal layer's contract be stated).
struct GradCheckCase {
    std::string name;
    std::vector<TensorT<double>> inputs;
    std::function<TensorT<double>(TapeT<double>&, std::vector<TensorT<double>>&)> build;
    double expected_scale = 1.0;
};

/// Max relative error over all elements of all inputs.
double max_rel_error(const GradCheckCase& c, double step = kGradCheckStep);

/// Finite-difference sweep over every differentiable op plus the composite
/// attention-block-and-heads graph, all in double precision. Deterministic
/// for a fixed seed.
std::vector<OpReport> run_gradcheck_suite(std::uint64_t seed = 12345,
                                          double tol = kGradCheckTolerance);

}  // namespace cta
