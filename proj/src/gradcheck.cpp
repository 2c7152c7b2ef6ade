#include "pahnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace pahnet {

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double eps) {
  if (!(eps > 0.0)) throw ContractError("finite_diff_grad: eps must be positive");
  Matrix grad(x.rows(), x.cols());
  Matrix probe = x.matrix();
  for (Index i = 0; i < probe.size(); ++i) {
    const double original = probe.data()[i];
    probe.data()[i] = original + eps;
    const double up = f(Tensor(x.shape(), probe));
    probe.data()[i] = original - eps;
    const double down = f(Tensor(x.shape(), probe));
    probe.data()[i] = original;
    grad.data()[i] = (up - down) / (2.0 * eps);
    if (!std::isfinite(grad.data()[i])) {
      throw NumericError("finite_diff_grad: non-finite difference at coordinate " +
                         std::to_string(i) + " (f is not differentiable there)");
    }
  }
  return Tensor(x.shape(), std::move(grad));
}

double relative_error(const Matrix& analytic, const Matrix& numeric, double floor) {
  if (analytic.rows() != numeric.rows() || analytic.cols() != numeric.cols()) {
    throw DimensionError("relative_error: gradient shapes differ");
  }
  const double scale =
      std::max({analytic.cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff(), floor});
  return (analytic - numeric).cwiseAbs().maxCoeff() / scale;
}

}  // namespace pahnet
