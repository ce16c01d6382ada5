#pragma once

#include <functional>

#include "dropdist/tensor.hpp"

namespace dropdist {

/// Scalar function of one tensor input, expressed on a tape.
using ScalarFn = std::function<Var(Tape&, Var)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares the tape gradient of `fn` at `point` against central differences
/// with step `h`. Relative error per coordinate is
/// |analytic - numeric| / (|analytic| + |numeric|), and zero when both
/// magnitudes fall below `zero_floor` (central-difference roundoff is about
/// 1e-16 |f| / h, so true zeros never read as exact zeros numerically).
GradCheckResult finite_diff_check(const ScalarFn& fn, const Tensor& point, double h = 1e-5,
                                  double zero_floor = 1e-8);

/// Central-difference gradient of `fn` at `point`, without any tape gradient.
std::vector<double> numeric_gradient(const ScalarFn& fn, const Tensor& point, double h = 1e-5);

}  // namespace dropdist
