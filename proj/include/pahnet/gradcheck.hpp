#pragma once

#include <functional>

#include "pahnet/tensor.hpp"

namespace pahnet {

inline constexpr double kFiniteDifferenceStep = 1e-6;

/// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) for every
/// coordinate of x. `f` receives constant tensors. A non-finite difference
/// (f undefined or non-differentiable at x) raises NumericError naming the
/// coordinate.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double eps = kFiniteDifferenceStep);

/// max_i |a_i - b_i| / max(max_i |a_i|, max_i |b_i|, floor).
///
/// Measured over the whole tensor so that coordinates whose true gradient is
/// ~0 do not turn finite-difference round-off into a large ratio.
double relative_error(const Matrix& analytic, const Matrix& numeric, double floor = 1e-5);

}  // namespace pahnet
