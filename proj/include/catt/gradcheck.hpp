#ifndef CATT_GRADCHECK_HPP
#define CATT_GRADCHECK_HPP

#include <algorithm>
#include <cmath>

#include "catt/loss.hpp"

namespace catt {

struct GradCheckResult {
  double max_rel_error = 0;
  double max_abs_error = 0;
  Index coordinates = 0;
};

/// Compares `analytic` against central differences of `f` around `x`, coordinate by
/// coordinate. Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
template <typename Scalar, typename F>
GradCheckResult central_difference_check(F&& f, Mat<Scalar> x, const Mat<Scalar>& analytic, Scalar h) {
  GradCheckResult res;
  for (Index c = 0; c < x.cols(); ++c) {
    for (Index r = 0; r < x.rows(); ++r) {
      const Scalar orig = x(r, c);
      x(r, c) = orig + h;
      const Scalar up = f(x);
      x(r, c) = orig - h;
      const Scalar down = f(x);
      x(r, c) = orig;
      const double numeric = static_cast<double>((up - down) / (2 * h));
      const double exact = static_cast<double>(analytic(r, c));
      const double abs_err = std::abs(numeric - exact);
      const double denom = std::max({std::abs(exact), std::abs(numeric), 1e-8});
      res.max_abs_error = std::max(res.max_abs_error, abs_err);
      res.max_rel_error = std::max(res.max_rel_error, abs_err / denom);
      ++res.coordinates;
    }
  }
  return res;
}

/// Finite-difference check of compute_loss's embedding gradient for the configured variant.
inline GradCheckResult loss_gradient_check(const SequenceTensor<double>& z, const LossConfig& cfg, double h) {
  if (!(h >= 1e-6 && h <= 1e-4)) throw ConfigError("loss_gradient_check: h must lie in [1e-6, 1e-4]");
  const auto analytic = compute_loss(z, cfg);
  auto value = [&](const Mat<double>& rows) {
    return compute_loss(SequenceTensor<double>(z.n, z.t, rows), cfg).value;
  };
  return central_difference_check<double>(value, z.rows, analytic.grad.rows, h);
}

}  // namespace catt

#endif  // CATT_GRADCHECK_HPP
