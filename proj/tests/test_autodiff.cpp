#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "dropdist/gradcheck.hpp"
#include "dropdist/optim.hpp"
#include "dropdist/tensor.hpp"

using namespace dropdist;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t = Tensor::zeros(r, c);
  for (auto& v : t.values) v = u(rng);
  return t;
}

// Values bounded away from zero so kinked activations stay differentiable under h = 1e-5.
Tensor away_from_zero(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  Tensor t = random_tensor(r, c, rng, 0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (auto& v : t.values)
    if (sign(rng)) v = -v;
  return t;
}

void require_close(std::span<const double> got, std::span<const double> want, double tol) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(tol));
}

}  // namespace

// KL(softmax([2,0]) || uniform) in closed form: 0.327813...
double kl_two_zero() {
  const double p0 = 1.0 / (1.0 + std::exp(-2.0));
  return p0 * std::log(2.0 * p0) + (1.0 - p0) * std::log(2.0 * (1.0 - p0));
}

TEST_CASE("matmul hand values and identity") {
  Tape tape;
  Tensor eye = Tensor::from_rows({{1, 0}, {0, 1}});
  Tensor m = Tensor::from_rows({{1, 2}, {3, 4}});
  Var r = matmul(tape.constant(eye), tape.constant(m));
  CHECK(std::vector<double>(r.values().begin(), r.values().end()) == m.values);

  Var col = matmul(tape.constant(m), tape.constant(Tensor::from_rows({{1}, {1}})));
  CHECK(col.shape() == std::vector<std::size_t>{2, 1});
  CHECK(col.values()[0] == 3.0);
  CHECK(col.values()[1] == 7.0);

  CHECK_THROWS_AS(matmul(tape.constant(m), tape.constant(Tensor::zeros(3, 1))), std::invalid_argument);
}

TEST_CASE("backward of sum(a*b) matches finite differences") {
  std::mt19937_64 rng(3);
  const Tensor b = random_tensor(3, 4, rng);
  ScalarFn fn = [&](Tape& tape, Var a) { return sum(mul(a, tape.constant(b))); };
  CHECK(finite_diff_check(fn, random_tensor(3, 4, rng)).max_rel_error < 1e-6);
}

TEST_CASE("spmm") {
  SUBCASE("empty edge list gives zeros") {
    Tape tape;
    EdgeIndex e{3, {}, {}};
    Var out = spmm(e, tape.constant(Tensor({0}, {})), tape.constant(Tensor::from_rows({{1, 2}, {3, 4}, {5, 6}})));
    for (double v : out.values()) CHECK(v == 0.0);
    CHECK(out.shape() == std::vector<std::size_t>{3, 2});
  }
  SUBCASE("single directed edge") {
    Tape tape;
    EdgeIndex e{2, {0}, {1}};
    Var out = spmm(e, tape.constant(Tensor({1}, {1.0})), tape.constant(Tensor::from_rows({{3}, {5}})));
    CHECK(out.values()[0] == 0.0);
    CHECK(out.values()[1] == 3.0);
  }
  SUBCASE("equals dense product with the materialized adjacency") {
    std::mt19937_64 rng(11);
    const std::size_t n = 6;
    EdgeIndex e{n, {}, {}};
    std::vector<double> w;
    Tensor dense = Tensor::zeros(n, n);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (u(rng) < 0.4) {
          e.src.push_back(j);
          e.dst.push_back(i);
          w.push_back(u(rng));
          dense.at(i, j) += w.back();
        }
    const Tensor x = random_tensor(n, 3, rng);
    Tape tape;
    Var sparse = spmm(e, tape.constant(Tensor({w.size()}, w)), tape.constant(x));
    Var ref = matmul(tape.constant(dense), tape.constant(x));
    require_close(sparse.values(), ref.values(), 1e-12);
  }
  SUBCASE("endpoint out of range") {
    Tape tape;
    EdgeIndex e{2, {0}, {2}};
    CHECK_THROWS(spmm(e, tape.constant(Tensor({1}, {1.0})), tape.constant(Tensor::from_rows({{3}, {5}}))));
  }
  SUBCASE("gradients reach both weights and features") {
    std::mt19937_64 rng(5);
    EdgeIndex e{4, {0, 1, 2, 3, 0, 2}, {1, 0, 3, 2, 2, 0}};
    const Tensor x = random_tensor(4, 2, rng), w = random_tensor(6, 1, rng);
    const Tensor w1({6}, w.values);
    const Tensor mix = random_tensor(4, 2, rng);
    ScalarFn by_x = [&](Tape& t, Var v) { return sum(mul(spmm(e, t.constant(w1), v), t.constant(mix))); };
    ScalarFn by_w = [&](Tape& t, Var v) { return sum(mul(spmm(e, v, t.constant(x)), t.constant(mix))); };
    CHECK(finite_diff_check(by_x, x).max_rel_error < 1e-6);
    CHECK(finite_diff_check(by_w, w1).max_rel_error < 1e-6);
  }
}

TEST_CASE("activations and segment softmax") {
  Tape tape;
  Var r = relu(tape.constant(Tensor({2}, {-2.0, 3.0})));
  CHECK(r.values()[0] == 0.0);
  CHECK(r.values()[1] == 3.0);

  const std::vector<std::size_t> seg{0, 0, 0};
  Var s = segment_softmax(tape.constant(Tensor({3}, {0.7, 0.7, 0.7})), seg, 1);
  for (double v : s.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  std::mt19937_64 rng(2);
  const std::vector<std::size_t> seg2{0, 1, 0, 2, 1, 1, 2};
  Var s2 = segment_softmax(tape.constant(random_tensor(7, 1, rng, -5, 5)), seg2, 3);
  double sums[3] = {0, 0, 0};
  for (std::size_t i = 0; i < seg2.size(); ++i) sums[seg2[i]] += s2.values()[i];
  for (double v : sums) CHECK(std::abs(v - 1.0) < 1e-12);

  CHECK_THROWS_AS(segment_softmax(tape.constant(Tensor({2}, {1.0, 2.0})), std::vector<std::size_t>{0, 0}, 2),
                  std::invalid_argument);

  // elu and leaky relu are monotone
  Var e = elu(tape.constant(Tensor({3}, {-2.0, -1.0, 0.5})));
  CHECK(e.values()[0] < e.values()[1]);
  CHECK(e.values()[1] < e.values()[2]);
  Var lr = leaky_relu(tape.constant(Tensor({2}, {-1.0, 2.0})), 0.2);
  CHECK(lr.values()[0] == doctest::Approx(-0.2));
  CHECK(lr.values()[1] == 2.0);
}

TEST_CASE("every primitive matches finite differences") {
  std::mt19937_64 rng(17);
  const Tensor other = random_tensor(4, 3, rng);
  const Tensor mix = random_tensor(4, 3, rng);
  const Tensor right = random_tensor(3, 2, rng);
  const Tensor bias = random_tensor(1, 3, rng);
  const Tensor six = random_tensor(6, 1, rng);
  const std::vector<std::size_t> rows{3, 0, 0, 2};
  const std::vector<std::size_t> seg{0, 1, 1, 0, 2, 2, 2, 1, 0, 2, 1, 0};
  const std::vector<int> labels{0, 2, 1, 1};
  const std::vector<std::size_t> nodes{0, 1, 3};
  const Tensor target_probs = softmax_rows(random_tensor(4, 3, rng), 1.0);
  Tensor binary = random_tensor(4, 3, rng, 0.05, 0.95);
  for (auto& v : binary.values) v = v > 0.5 ? 1.0 : 0.0;

  auto weighted = [&](Tape& t, Var v) { return sum(mul(v, t.constant(mix))); };
  std::vector<std::pair<const char*, ScalarFn>> cases = {
      {"matmul", [&](Tape& t, Var v) { return sum(matmul(v, t.constant(right))); }},
      {"add", [&](Tape& t, Var v) { return weighted(t, add(v, t.constant(other))); }},
      {"sub", [&](Tape& t, Var v) { return weighted(t, sub(t.constant(other), v)); }},
      {"mul", [&](Tape& t, Var v) { return weighted(t, mul(v, v)); }},
      {"scale", [&](Tape& t, Var v) { return weighted(t, scale(v, -2.5)); }},
      {"add_row", [&](Tape& t, Var v) { return weighted(t, add_row(v, t.constant(bias))); }},
      {"mean", [&](Tape& t, Var v) { return mean(mul(v, v)); }},
      {"gather_rows", [&](Tape& t, Var v) { return sum(mul(gather_rows(v, rows), t.constant(mix))); }},
      {"concat_cols",
       [&](Tape& t, Var v) {
         const std::vector<Var> parts{v, scale(v, 2.0)};
         return sum(matmul(concat_cols(parts), t.constant(six)));
       }},
      {"relu", [&](Tape& t, Var v) { return weighted(t, relu(v)); }},
      {"elu", [&](Tape& t, Var v) { return weighted(t, elu(v)); }},
      {"leaky_relu", [&](Tape& t, Var v) { return weighted(t, leaky_relu(v, 0.2)); }},
      {"log_softmax_rows", [&](Tape& t, Var v) { return weighted(t, log_softmax_rows(v)); }},
      {"cross_entropy", [&](Tape&, Var v) { return cross_entropy(v, labels, nodes); }},
      {"bce_with_logits", [&](Tape&, Var v) { return bce_with_logits(v, binary, nodes); }},
      {"mse", [&](Tape& t, Var v) { return mse(v, t.constant(other)); }},
      {"kl_to_softmax", [&](Tape&, Var v) { return kl_to_softmax(v, target_probs, nodes); }},
      {"binary_kl_to_sigmoid", [&](Tape&, Var v) { return binary_kl_to_sigmoid(v, binary, nodes); }},
  };
  const Tensor point = away_from_zero(4, 3, rng);
  for (auto& [name, fn] : cases) {
    CAPTURE(name);
    CHECK(finite_diff_check(fn, point).max_rel_error < 1e-6);
  }

  const Tensor flat_mix({12}, mix.values);
  ScalarFn seg_fn = [&](Tape& t, Var v) { return sum(mul(segment_softmax(v, seg, 3), t.constant(flat_mix))); };
  CHECK(finite_diff_check(seg_fn, Tensor({12}, point.values)).max_rel_error < 1e-6);
}

TEST_CASE("losses") {
  Tape tape;
  const std::vector<int> label0{0};
  const std::vector<std::size_t> node0{0};
  CHECK(cross_entropy(tape.constant(Tensor::from_rows({{0, 0}})), label0, node0).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(cross_entropy(tape.constant(Tensor::from_rows({{1e6, 0, 0}})), label0, node0).item() ==
        doctest::Approx(0.0));
  const Tensor a = Tensor::from_rows({{1, -2}, {3, 0.5}});
  CHECK(mse(tape.constant(a), tape.constant(a)).item() == 0.0);

  const std::vector<std::size_t> none;
  CHECK_THROWS_AS(cross_entropy(tape.constant(a), std::vector<int>{0, 1}, none), std::invalid_argument);
  CHECK_THROWS(cross_entropy(tape.constant(a), std::vector<int>{0, 2}, std::vector<std::size_t>{1}));

  // KL(softmax([2,0]) || [0.5, 0.5])
  const Tensor p = softmax_rows(Tensor::from_rows({{2, 0}}), 1.0);
  CHECK(kl_to_softmax(tape.constant(Tensor::from_rows({{0, 0}})), p, node0).item() ==
        doctest::Approx(kl_two_zero()).epsilon(1e-12));
}

TEST_CASE("backward semantics") {
  std::mt19937_64 rng(8);
  Tensor x = random_tensor(3, 2, rng);
  x.requires_grad = true;
  {
    Tape tape;
    tape.backward(sum(tape.param(x)));
  }
  for (double g : x.grad) CHECK(g == 1.0);

  // a second call accumulates
  {
    Tape tape;
    tape.backward(sum(tape.param(x)));
  }
  for (double g : x.grad) CHECK(g == 2.0);

  x.zero_grad();
  {
    Tape tape;
    Var v = tape.param(x);
    tape.backward(sum(mul(v, v)));
  }
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(x.grad[i] == doctest::Approx(2.0 * x.values[i]).epsilon(1e-15));

  Tape tape;
  CHECK_THROWS_AS(tape.backward(tape.param(x)), std::invalid_argument);

  // gradient of a sum of losses equals the sum of the separate gradients
  const Tensor t1 = random_tensor(3, 2, rng), t2 = random_tensor(3, 2, rng);
  auto grad_of = [&](bool first, bool second) {
    Tensor p(x.shape, x.values, true);
    Tape tp;
    Var v = tp.param(p);
    Var l1 = mse(v, tp.constant(t1)), l2 = sum(mul(elu(v), tp.constant(t2)));
    tp.backward(first && second ? add(l1, l2) : first ? l1 : l2);
    return p.grad;
  };
  const auto both = grad_of(true, true), g1 = grad_of(true, false), g2 = grad_of(false, true);
  for (std::size_t i = 0; i < both.size(); ++i) CHECK(both[i] == doctest::Approx(g1[i] + g2[i]).epsilon(1e-14));
}

TEST_CASE("two-layer composite matches finite differences") {
  std::mt19937_64 rng(21);
  const Tensor w1 = random_tensor(3, 5, rng), w2 = random_tensor(5, 2, rng), b = random_tensor(1, 5, rng);
  const std::vector<int> labels{1, 0, 1, 1};
  const std::vector<std::size_t> nodes{0, 1, 2, 3};
  ScalarFn fn = [&](Tape& t, Var x) {
    Var h = elu(add_row(matmul(x, t.constant(w1)), t.constant(b)));
    return cross_entropy(matmul(h, t.constant(w2)), labels, nodes);
  };
  CHECK(finite_diff_check(fn, random_tensor(4, 3, rng), 1e-5).max_rel_error < 1e-4);
}

TEST_CASE("non-finite values are a hard error") {
  Tape tape;
  const double inf = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(add(tape.constant(Tensor({1}, {inf})), tape.constant(Tensor({1}, {-inf}))), std::domain_error);
  CHECK_THROWS_AS(check_finite(std::vector<double>{1.0, std::nan("")}, "test"), std::domain_error);
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves params unchanged") {
    Tensor p({3}, {1.0, -2.0, 0.5});
    p.grad.assign(3, 0.0);
    const auto before = p.values;
    AdamState s;
    std::vector<Tensor*> ps{&p};
    adam_step(ps, s);
    CHECK(p.values == before);
    CHECK(s.t == 1);
  }
  SUBCASE("first step moves by lr against the gradient sign") {
    Tensor p({3}, {1.0, -2.0, 0.5});
    p.grad = {3.0, -0.7, 12.0};
    const auto before = p.values;
    AdamState s;
    std::vector<Tensor*> ps{&p};
    adam_step(ps, s);
    for (std::size_t i = 0; i < 3; ++i) {
      const double delta = p.values[i] - before[i];
      const double sign = p.grad[i] > 0 ? 1.0 : -1.0;
      CHECK(std::abs(delta + s.lr * sign) < 1e-6 * s.lr);
    }
  }
  SUBCASE("shape mismatch between steps") {
    Tensor p({2}, {1.0, 2.0});
    p.grad = {1.0, 1.0};
    AdamState s;
    std::vector<Tensor*> ps{&p};
    adam_step(ps, s);
    Tensor q({3}, {1.0, 2.0, 3.0});
    q.grad = {1.0, 1.0, 1.0};
    std::vector<Tensor*> qs{&q};
    CHECK_THROWS_AS(adam_step(qs, s), std::invalid_argument);
  }
  SUBCASE("identical runs are bit-identical") {
    auto run = [] {
      std::mt19937_64 rng(99);
      Tensor w = random_tensor(3, 2, rng);
      w.requires_grad = true;
      const Tensor x = random_tensor(5, 3, rng), y = random_tensor(5, 2, rng);
      AdamState s;
      std::vector<Tensor*> ps{&w};
      for (int step = 0; step < 50; ++step) {
        Tape tape;
        tape.backward(mse(matmul(tape.constant(x), tape.param(w)), tape.constant(y)));
        adam_step(ps, s);
        zero_grads(ps);
      }
      return w.values;
    };
    CHECK(run() == run());
  }
}

TEST_CASE("finite difference checker self-tests") {
  std::mt19937_64 rng(4);
  const Tensor q = random_tensor(4, 4, rng);
  ScalarFn quad = [&](Tape& t, Var v) { return sum(mul(matmul(t.constant(q), v), v)); };
  CHECK(finite_diff_check(quad, random_tensor(4, 1, rng)).max_rel_error < 1e-8);

  ScalarFn constant = [](Tape& t, Var) { return sum(t.constant(Tensor({2}, {1.0, 2.0}))); };
  const auto r = finite_diff_check(constant, random_tensor(3, 1, rng));
  CHECK(r.max_rel_error == 0.0);
  CHECK(r.analytic == 0.0);
  CHECK(r.numeric == 0.0);
}
