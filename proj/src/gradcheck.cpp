#include "dropdist/gradcheck.hpp"

#include <cmath>

namespace dropdist {

namespace {

double evaluate(const ScalarFn& fn, Tensor input) {
  input.requires_grad = false;
  Tape tape;
  Var x = tape.constant(std::move(input));
  return fn(tape, x).item();
}

}  // namespace

std::vector<double> numeric_gradient(const ScalarFn& fn, const Tensor& point, double h) {
  std::vector<double> g(point.size());
  Tensor probe(point.shape, point.values);
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double orig = probe.values[i];
    probe.values[i] = orig + h;
    const double fp = evaluate(fn, probe);
    probe.values[i] = orig - h;
    const double fm = evaluate(fn, probe);
    probe.values[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

GradCheckResult finite_diff_check(const ScalarFn& fn, const Tensor& point, double h, double zero_floor) {
  Tensor x(point.shape, point.values, true);
  {
    Tape tape;
    Var v = tape.param(x);
    tape.backward(fn(tape, v));
  }
  if (!x.has_grad()) x.grad.assign(x.size(), 0.0);

  const auto numeric = numeric_gradient(fn, point, h);
  GradCheckResult r;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    const double a = x.grad[i], n = numeric[i];
    // both sides at roundoff level: an exact zero, not a relative mismatch
    const bool zero = std::abs(a) < zero_floor && std::abs(n) < zero_floor;
    const double err = zero ? 0.0 : std::abs(a - n) / (std::abs(a) + std::abs(n));
    if (i == 0 || err > r.max_rel_error) r = {err, i, a, n};
  }
  return r;
}

}  // namespace dropdist
