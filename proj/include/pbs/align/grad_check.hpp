#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "pbs/align/tensor.hpp"

namespace pbs::align {

template <typename Scalar>
struct Differentiated {
  Scalar value = Scalar(0);
  std::vector<TokenMatrix<Scalar>> grads;  // one per input, same shapes
};

template <typename Scalar>
struct GradCheckReport {
  Scalar max_rel_error = Scalar(0);
  Scalar max_abs_error = Scalar(0);
  std::size_t coordinates = 0;
  std::size_t worst_input = 0;
  Eigen::Index worst_index = 0;
  bool passed = false;
};

template <typename Scalar>
struct GradCheckOptions {
  Scalar eps = Scalar(1e-5);
  Scalar tol = Scalar(1e-4);
  // Denominator floor for the relative error, so coordinates whose true
  // derivative is ~0 are judged on absolute error instead.
  Scalar abs_floor = Scalar(1e-6);
};

// Central differences on every coordinate of every input, compared with the
// analytic gradient returned by `op`. Relative error per coordinate is
// |a - n| / max(|a|, |n|, abs_floor); the check passes iff the maximum is <= tol.
template <typename Scalar, typename Op>
GradCheckReport<Scalar> grad_check(Op&& op, std::vector<TokenMatrix<Scalar>> inputs,
                                   GradCheckOptions<Scalar> opt = {}) {
  if (!(opt.eps > Scalar(0))) throw DomainError("grad_check step must be positive");
  const Differentiated<Scalar> analytic = op(std::as_const(inputs));
  if (analytic.grads.size() != inputs.size())
    throw ValidationError("grad_check: op returned the wrong number of gradients");
  GradCheckReport<Scalar> report;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    require_same_shape(analytic.grads[t], inputs[t], "grad_check gradient");
    auto& x = inputs[t];
    for (Eigen::Index k = 0; k < x.size(); ++k) {
      const Scalar saved = x.data()[k];
      x.data()[k] = saved + opt.eps;
      const Scalar up = op(std::as_const(inputs)).value;
      x.data()[k] = saved - opt.eps;
      const Scalar down = op(std::as_const(inputs)).value;
      x.data()[k] = saved;
      const Scalar numeric = (up - down) / (Scalar(2) * opt.eps);
      const Scalar a = analytic.grads[t].data()[k];
      const Scalar abs_err = std::abs(a - numeric);
      const Scalar rel_err =
          abs_err / std::max({std::abs(a), std::abs(numeric), opt.abs_floor});
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel_err > report.max_rel_error || report.coordinates == 0) {
        report.max_rel_error = std::max(report.max_rel_error, rel_err);
        report.worst_input = t;
        report.worst_index = k;
      }
      ++report.coordinates;
    }
  }
  report.passed = report.max_rel_error <= opt.tol;
  return report;
}

}  // namespace pbs::align
