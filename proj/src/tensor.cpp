#include "dropdist/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace dropdist {

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(std::vector<std::size_t> shape_, std::vector<double> values_, bool requires_grad_)
    : shape(std::move(shape_)), values(std::move(values_)), requires_grad(requires_grad_) {
  if (shape_product(shape) != values.size()) {
    throw std::invalid_argument("Tensor: shape " + shape_string(shape) + " does not match " +
                                std::to_string(values.size()) + " values");
  }
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
  return Tensor({rows, cols}, std::vector<double>(rows * cols, 0.0), requires_grad);
}

Tensor Tensor::from_rows(const std::vector<std::vector<double>>& rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows[0].size();
  std::vector<double> v;
  v.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw std::invalid_argument("Tensor::from_rows: ragged rows");
    v.insert(v.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(v));
}

Tensor Tensor::scalar(double v) { return Tensor({1, 1}, {v}); }

std::size_t Tensor::cols() const {
  return shape.size() < 2 ? 1 : shape[1];
}

void Tensor::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t p = 1;
  for (auto s : shape) p *= s;
  return p;
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

void check_finite(std::span<const double> values, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) throw std::domain_error(std::string(op) + ": non-finite value produced");
  }
}

// ---------------------------------------------------------------------------
// Var

const std::vector<std::size_t>& Var::shape() const { return tape_->value(id_).shape; }
std::span<const double> Var::values() const { return tape_->value(id_).values; }
std::size_t Var::rows() const { return tape_->value(id_).rows(); }
std::size_t Var::cols() const { return tape_->value(id_).cols(); }
bool Var::needs_grad() const { return tape_->needs_grad(id_); }

double Var::item() const {
  const auto& v = tape_->value(id_);
  if (v.size() != 1) throw std::invalid_argument("Var::item: not a scalar " + shape_string(v.shape));
  return v.values[0];
}

Tensor Var::to_tensor() const {
  const auto& v = tape_->value(id_);
  return Tensor(v.shape, v.values);
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::param(Tensor& t) {
  Node n;
  n.external = &t;
  n.sink = t.requires_grad ? &t : nullptr;
  n.needs_grad = t.requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(const Tensor& t) {
  Node n;
  n.external = &t;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor&& t) {
  Node n;
  n.owned = std::move(t);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward, const char* op) {
  check_finite(value.values, op);
  Node n;
  n.owned = std::move(value);
  for (auto id : inputs) {
    if (id >= nodes_.size()) throw std::logic_error(std::string(op) + ": operand not on this tape");
    n.needs_grad = n.needs_grad || nodes_[id].needs_grad;
  }
  if (n.needs_grad) {
    n.inputs = std::move(inputs);
    n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.owned;
}

std::vector<double>& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(value(id).size(), 0.0);
  return n.grad;
}

void Tape::backward(Var out) {
  if (value(out.id()).size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_string(value(out.id()).shape));
  }
  const double one = 1.0;
  backward(out, std::span<const double>(&one, 1));
}

void Tape::backward(Var out, std::span<const double> seed) {
  if (out.valid() && &out.tape() != this) throw std::logic_error("backward: Var from another tape");
  const std::size_t root = out.id();
  if (seed.size() != value(root).size()) throw std::invalid_argument("backward: seed size mismatch");
  for (auto& n : nodes_) n.grad.clear();
  if (!nodes_[root].needs_grad) return;
  nodes_[root].grad.assign(seed.begin(), seed.end());

  for (std::size_t k = root + 1; k-- > 0;) {
    Node& n = nodes_[k];
    if (n.grad.empty()) continue;
    if (n.sink) {
      Tensor& sink = *n.sink;
      if (sink.grad.size() != sink.values.size()) sink.grad.assign(sink.values.size(), 0.0);
      for (std::size_t i = 0; i < n.grad.size(); ++i) sink.grad[i] += n.grad[i];
    }
    if (n.backward) {
      std::vector<double> g = std::move(n.grad);
      n.backward(*this, g);
    }
  }
  for (auto& n : nodes_) n.grad.clear();
}

// ---------------------------------------------------------------------------
// helpers

namespace {

void require_same_tape(Var a, Var b, const char* op) {
  if (&a.tape() != &b.tape()) throw std::logic_error(std::string(op) + ": operands on different tapes");
}

void require_rank2(Var a, const char* op) {
  if (a.shape().size() != 2) throw std::invalid_argument(std::string(op) + ": expected a matrix, got " +
                                                         shape_string(a.shape()));
}

// out[m x p] += a[m x k] * b[k x p]
void gemm_nn(const double* a, const double* b, double* out, std::size_t m, std::size_t k, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out + i * p;
    const double* arow = a + i * k;
    for (std::size_t t = 0; t < k; ++t) {
      const double av = arow[t];
      if (av == 0.0) continue;
      const double* brow = b + t * p;
      for (std::size_t j = 0; j < p; ++j) orow[j] += av * brow[j];
    }
  }
}

// out[m x k] += g[m x p] * b[k x p]^T
void gemm_nt(const double* g, const double* b, double* out, std::size_t m, std::size_t k, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * p;
    double* orow = out + i * k;
    for (std::size_t t = 0; t < k; ++t) {
      const double* brow = b + t * p;
      double acc = 0.0;
      for (std::size_t j = 0; j < p; ++j) acc += grow[j] * brow[j];
      orow[t] += acc;
    }
  }
}

// out[k x p] += a[m x k]^T * g[m x p]
void gemm_tn(const double* a, const double* g, double* out, std::size_t m, std::size_t k, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* grow = g + i * p;
    for (std::size_t t = 0; t < k; ++t) {
      const double av = arow[t];
      if (av == 0.0) continue;
      double* orow = out + t * p;
      for (std::size_t j = 0; j < p; ++j) orow[j] += av * grow[j];
    }
  }
}

std::vector<std::size_t> nodes_checked(std::span<const std::size_t> nodes, std::size_t rows, const char* op) {
  if (nodes.empty()) throw std::invalid_argument(std::string(op) + ": empty node mask");
  for (auto v : nodes) {
    if (v >= rows) throw std::out_of_range(std::string(op) + ": node index out of range");
  }
  return {nodes.begin(), nodes.end()};
}

}  // namespace

// ---------------------------------------------------------------------------
// primitives

Var matmul(Var a, Var b) {
  require_same_tape(a, b, "matmul");
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), p = b.cols();
  if (b.rows() != k) {
    throw std::invalid_argument("matmul: inner dimensions differ " + shape_string(a.shape()) + " * " +
                                shape_string(b.shape()));
  }
  Tensor out = Tensor::zeros(m, p);
  gemm_nn(a.values().data(), b.values().data(), out.values.data(), m, k, p);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(
      std::move(out), {ia, ib},
      [ia, ib, m, k, p](Tape& t, std::span<const double> g) {
        if (t.needs_grad(ia)) gemm_nt(g.data(), t.value(ib).values.data(), t.grad_buffer(ia).data(), m, k, p);
        if (t.needs_grad(ib)) gemm_tn(t.value(ia).values.data(), g.data(), t.grad_buffer(ib).data(), m, k, p);
      },
      "matmul");
}

namespace {

Var binary_elementwise(Var a, Var b, const char* op, double sign_b) {
  require_same_tape(a, b, op);
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
  Tensor out(a.shape(), std::vector<double>(a.values().begin(), a.values().end()));
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out.values[i] += sign_b * bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(
      std::move(out), {ia, ib},
      [ia, ib, sign_b](Tape& t, std::span<const double> g) {
        if (t.needs_grad(ia)) {
          auto& ga = t.grad_buffer(ia);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.needs_grad(ib)) {
          auto& gb = t.grad_buffer(ib);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += sign_b * g[i];
        }
      },
      op);
}

}  // namespace

Var add(Var a, Var b) { return binary_elementwise(a, b, "add", 1.0); }
Var sub(Var a, Var b) { return binary_elementwise(a, b, "sub", -1.0); }

Var mul(Var a, Var b) {
  require_same_tape(a, b, "mul");
  if (a.shape() != b.shape()) throw std::invalid_argument("mul: shape mismatch");
  Tensor out(a.shape(), std::vector<double>(a.size()));
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out.values[i] = av[i] * bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(
      std::move(out), {ia, ib},
      [ia, ib](Tape& t, std::span<const double> g) {
        const auto& va = t.value(ia).values;
        const auto& vb = t.value(ib).values;
        if (t.needs_grad(ia)) {
          auto& ga = t.grad_buffer(ia);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
        }
        if (t.needs_grad(ib)) {
          auto& gb = t.grad_buffer(ib);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
        }
      },
      "mul");
}

Var scale(Var a, double s) {
  Tensor out(a.shape(), std::vector<double>(a.values().begin(), a.values().end()));
  for (auto& v : out.values) v *= s;
  const std::size_t ia = a.id();
  return a.tape().record(
      std::move(out), {ia},
      [ia, s](Tape& t, std::span<const double> g) {
        auto& ga = t.grad_buffer(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
      },
      "scale");
}

Var add_row(Var x, Var bias) {
  require_same_tape(x, bias, "add_row");
  require_rank2(x, "add_row");
  const std::size_t n = x.rows(), d = x.cols();
  if (bias.size() != d) throw std::invalid_argument("add_row: bias width mismatch");
  Tensor out(x.shape(), std::vector<double>(x.values().begin(), x.values().end()));
  auto bv = bias.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out.values[i * d + j] += bv[j];
  const std::size_t ix = x.id(), ib = bias.id();
  return x.tape().record(
      std::move(out), {ix, ib},
      [ix, ib, n, d](Tape& t, std::span<const double> g) {
        if (t.needs_grad(ix)) {
          auto& gx = t.grad_buffer(ix);
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (t.needs_grad(ib)) {
          auto& gb = t.grad_buffer(ib);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
        }
      },
      "add_row");
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  const std::size_t ia = a.id();
  return a.tape().record(
      Tensor::scalar(s), {ia},
      [ia](Tape& t, std::span<const double> g) {
        for (auto& v : t.grad_buffer(ia)) v += g[0];
      },
      "sum");
}

Var mean(Var a) {
  if (a.size() == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Var spmm(const EdgeIndex& edges, Var weights, Var x) {
  require_same_tape(weights, x, "spmm");
  require_rank2(x, "spmm");
  const std::size_t n = edges.num_nodes, d = x.cols(), m = edges.size();
  if (x.rows() != n) throw std::invalid_argument("spmm: feature rows differ from node count");
  if (edges.dst.size() != m || weights.size() != m) throw std::invalid_argument("spmm: edge array size mismatch");
  for (std::size_t e = 0; e < m; ++e) {
    if (edges.src[e] >= n || edges.dst[e] >= n) throw std::out_of_range("spmm: edge endpoint out of range");
  }
  Tensor out = Tensor::zeros(n, d);
  auto w = weights.values();
  auto xv = x.values();
  for (std::size_t e = 0; e < m; ++e) {
    const double we = w[e];
    const double* xs = xv.data() + edges.src[e] * d;
    double* od = out.values.data() + edges.dst[e] * d;
    for (std::size_t j = 0; j < d; ++j) od[j] += we * xs[j];
  }
  const std::size_t iw = weights.id(), ix = x.id();
  // The EdgeIndex is captured by pointer; it must outlive the tape.
  const EdgeIndex* ep = &edges;
  return x.tape().record(
      std::move(out), {iw, ix},
      [ep, iw, ix, d](Tape& t, std::span<const double> g) {
        const auto& ed = *ep;
        if (t.needs_grad(ix)) {
          auto& gx = t.grad_buffer(ix);
          const auto& wv = t.value(iw).values;
          for (std::size_t e = 0; e < ed.size(); ++e) {
            const double we = wv[e];
            const double* gd = g.data() + ed.dst[e] * d;
            double* gs = gx.data() + ed.src[e] * d;
            for (std::size_t j = 0; j < d; ++j) gs[j] += we * gd[j];
          }
        }
        if (t.needs_grad(iw)) {
          auto& gw = t.grad_buffer(iw);
          const auto& xv2 = t.value(ix).values;
          for (std::size_t e = 0; e < ed.size(); ++e) {
            const double* gd = g.data() + ed.dst[e] * d;
            const double* xs = xv2.data() + ed.src[e] * d;
            double acc = 0.0;
            for (std::size_t j = 0; j < d; ++j) acc += gd[j] * xs[j];
            gw[e] += acc;
          }
        }
      },
      "spmm");
}

Var gather_rows(Var x, std::span<const std::size_t> idx) {
  require_rank2(x, "gather_rows");
  const std::size_t n = x.rows(), d = x.cols();
  Tensor out = Tensor::zeros(idx.size(), d);
  auto xv = x.values();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= n) throw std::out_of_range("gather_rows: index out of range");
    std::copy_n(xv.data() + idx[r] * d, d, out.values.data() + r * d);
  }
  const std::size_t ix = x.id();
  std::vector<std::size_t> rows(idx.begin(), idx.end());
  return x.tape().record(
      std::move(out), {ix},
      [ix, rows = std::move(rows), d](Tape& t, std::span<const double> g) {
        auto& gx = t.grad_buffer(ix);
        for (std::size_t r = 0; r < rows.size(); ++r)
          for (std::size_t j = 0; j < d; ++j) gx[rows[r] * d + j] += g[r * d + j];
      },
      "gather_rows");
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t n = parts[0].rows();
  std::vector<std::size_t> widths, ids;
  std::size_t total = 0;
  for (const Var& p : parts) {
    require_same_tape(parts[0], p, "concat_cols");
    require_rank2(p, "concat_cols");
    if (p.rows() != n) throw std::invalid_argument("concat_cols: row count mismatch");
    widths.push_back(p.cols());
    ids.push_back(p.id());
    total += p.cols();
  }
  Tensor out = Tensor::zeros(n, total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto v = parts[k].values();
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(v.data() + i * widths[k], widths[k], out.values.data() + i * total + off);
    off += widths[k];
  }
  std::vector<std::size_t> inputs = ids;
  return parts[0].tape().record(
      std::move(out), std::move(inputs),
      [ids, widths, n, total](Tape& t, std::span<const double> g) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (t.needs_grad(ids[k])) {
            auto& gk = t.grad_buffer(ids[k]);
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t j = 0; j < widths[k]; ++j) gk[i * widths[k] + j] += g[i * total + off + j];
          }
          off += widths[k];
        }
      },
      "concat_cols");
}

// ---------------------------------------------------------------------------
// activations

namespace {

template <class F, class DF>
Var unary(Var x, F f, DF df, const char* op) {
  Tensor out(x.shape(), std::vector<double>(x.size()));
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out.values[i] = f(xv[i]);
  const std::size_t ix = x.id();
  return x.tape().record(
      std::move(out), {ix},
      [ix, df](Tape& t, std::span<const double> g) {
        const auto& v = t.value(ix).values;
        auto& gx = t.grad_buffer(ix);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(v[i]);
      },
      op);
}

}  // namespace

Var relu(Var x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; }, "relu");
}

Var elu(Var x, double alpha) {
  return unary(
      x, [alpha](double v) { return v > 0.0 ? v : alpha * std::expm1(v); },
      [alpha](double v) { return v > 0.0 ? 1.0 : alpha * std::exp(v); }, "elu");
}

Var leaky_relu(Var x, double slope) {
  return unary(
      x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v) { return v > 0.0 ? 1.0 : slope; }, "leaky_relu");
}

Var log_softmax_rows(Var x) {
  require_rank2(x, "log_softmax_rows");
  const std::size_t n = x.rows(), c = x.cols();
  Tensor out = Tensor::zeros(n, c);
  auto xv = x.values();
  for (std::size_t i = 0; i < n; ++i) {
    const double* r = xv.data() + i * c;
    const double mx = *std::max_element(r, r + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(r[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) out.values[i * c + j] = r[j] - lse;
  }
  const std::size_t ix = x.id();
  const std::size_t self = x.tape().size();
  return x.tape().record(
      std::move(out), {ix},
      [ix, self, n, c](Tape& t, std::span<const double> g) {
        const auto& y = t.value(self).values;
        auto& gx = t.grad_buffer(ix);
        for (std::size_t i = 0; i < n; ++i) {
          double gs = 0.0;
          for (std::size_t j = 0; j < c; ++j) gs += g[i * c + j];
          for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[i * c + j] - std::exp(y[i * c + j]) * gs;
        }
      },
      "log_softmax_rows");
}

Var segment_softmax(Var scores, std::span<const std::size_t> segment, std::size_t num_segments) {
  const std::size_t m = scores.size();
  if (segment.size() != m) throw std::invalid_argument("segment_softmax: segment ids size mismatch");
  std::vector<double> mx(num_segments, -std::numeric_limits<double>::infinity());
  std::vector<std::size_t> count(num_segments, 0);
  auto s = scores.values();
  for (std::size_t e = 0; e < m; ++e) {
    if (segment[e] >= num_segments) throw std::out_of_range("segment_softmax: segment id out of range");
    mx[segment[e]] = std::max(mx[segment[e]], s[e]);
    ++count[segment[e]];
  }
  for (std::size_t k = 0; k < num_segments; ++k) {
    if (count[k] == 0) throw std::invalid_argument("segment_softmax: empty segment " + std::to_string(k));
  }
  std::vector<double> denom(num_segments, 0.0);
  Tensor out(scores.shape(), std::vector<double>(m));
  for (std::size_t e = 0; e < m; ++e) {
    out.values[e] = std::exp(s[e] - mx[segment[e]]);
    denom[segment[e]] += out.values[e];
  }
  for (std::size_t e = 0; e < m; ++e) out.values[e] /= denom[segment[e]];
  const std::size_t is = scores.id();
  const std::size_t self = scores.tape().size();
  std::vector<std::size_t> seg(segment.begin(), segment.end());
  return scores.tape().record(
      std::move(out), {is},
      [is, self, seg = std::move(seg), num_segments](Tape& t, std::span<const double> g) {
        const auto& y = t.value(self).values;
        std::vector<double> dot(num_segments, 0.0);
        for (std::size_t e = 0; e < seg.size(); ++e) dot[seg[e]] += g[e] * y[e];
        auto& gs = t.grad_buffer(is);
        for (std::size_t e = 0; e < seg.size(); ++e) gs[e] += y[e] * (g[e] - dot[seg[e]]);
      },
      "segment_softmax");
}

// ---------------------------------------------------------------------------
// losses

Var cross_entropy(Var logits, std::span<const int> labels, std::span<const std::size_t> nodes) {
  require_rank2(logits, "cross_entropy");
  const std::size_t n = logits.rows(), c = logits.cols();
  if (labels.size() != n) throw std::invalid_argument("cross_entropy: label count differs from rows");
  auto rows = nodes_checked(nodes, n, "cross_entropy");
  for (auto v : rows) {
    if (labels[v] < 0 || static_cast<std::size_t>(labels[v]) >= c)
      throw std::out_of_range("cross_entropy: label out of class range");
  }
  auto xv = logits.values();
  const double inv = 1.0 / static_cast<double>(rows.size());
  double loss = 0.0;
  // softmax rows cached for backward, one per masked node
  std::vector<double> probs(rows.size() * c);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double* x = xv.data() + rows[r] * c;
    const double mx = *std::max_element(x, x + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(x[j] - mx);
    const double lse = mx + std::log(s);
    loss -= (x[labels[rows[r]]] - lse) * inv;
    for (std::size_t j = 0; j < c; ++j) probs[r * c + j] = std::exp(x[j] - lse);
  }
  std::vector<int> lab;
  lab.reserve(rows.size());
  for (auto v : rows) lab.push_back(labels[v]);
  const std::size_t ix = logits.id();
  return logits.tape().record(
      Tensor::scalar(loss), {ix},
      [ix, rows, lab = std::move(lab), probs = std::move(probs), c, inv](Tape& t, std::span<const double> g) {
        auto& gx = t.grad_buffer(ix);
        for (std::size_t r = 0; r < rows.size(); ++r) {
          for (std::size_t j = 0; j < c; ++j) {
            const double target = static_cast<int>(j) == lab[r] ? 1.0 : 0.0;
            gx[rows[r] * c + j] += g[0] * inv * (probs[r * c + j] - target);
          }
        }
      },
      "cross_entropy");
}

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + exp(-|x|)) + max(x, 0) - x t
double logistic_loss(double x, double t) { return std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x))); }

double binary_entropy(double t) {
  double h = 0.0;
  if (t > 0.0) h -= t * std::log(t);
  if (t < 1.0) h -= (1.0 - t) * std::log(1.0 - t);
  return h;
}

Var sigmoid_family_loss(Var logits, const Tensor& targets, std::span<const std::size_t> nodes, bool subtract_entropy,
                        const char* op) {
  require_rank2(logits, op);
  const std::size_t n = logits.rows(), c = logits.cols();
  if (targets.rows() != n || targets.cols() != c) throw std::invalid_argument(std::string(op) + ": target shape mismatch");
  auto rows = nodes_checked(nodes, n, op);
  auto xv = logits.values();
  const double inv = 1.0 / static_cast<double>(rows.size() * c);
  double loss = 0.0;
  for (auto v : rows) {
    for (std::size_t j = 0; j < c; ++j) {
      const double t = targets.values[v * c + j];
      double l = logistic_loss(xv[v * c + j], t);
      if (subtract_entropy) l -= binary_entropy(t);
      loss += l * inv;
    }
  }
  const std::size_t ix = logits.id();
  std::vector<double> tv;
  tv.reserve(rows.size() * c);
  for (auto v : rows) tv.insert(tv.end(), targets.values.begin() + v * c, targets.values.begin() + (v + 1) * c);
  return logits.tape().record(
      Tensor::scalar(loss), {ix},
      [ix, rows, tv = std::move(tv), c, inv](Tape& t, std::span<const double> g) {
        const auto& x = t.value(ix).values;
        auto& gx = t.grad_buffer(ix);
        for (std::size_t r = 0; r < rows.size(); ++r)
          for (std::size_t j = 0; j < c; ++j)
            gx[rows[r] * c + j] += g[0] * inv * (sigmoid(x[rows[r] * c + j]) - tv[r * c + j]);
      },
      op);
}

}  // namespace

Var bce_with_logits(Var logits, const Tensor& targets, std::span<const std::size_t> nodes) {
  for (double t : targets.values) {
    if (t != 0.0 && t != 1.0) throw std::invalid_argument("bce_with_logits: targets must be multi-hot");
  }
  return sigmoid_family_loss(logits, targets, nodes, false, "bce_with_logits");
}

Var binary_kl_to_sigmoid(Var logits, const Tensor& target_probs, std::span<const std::size_t> nodes) {
  return sigmoid_family_loss(logits, target_probs, nodes, true, "binary_kl_to_sigmoid");
}

Var mse(Var a, Var b) {
  require_same_tape(a, b, "mse");
  if (a.shape() != b.shape()) throw std::invalid_argument("mse: shape mismatch");
  if (a.size() == 0) throw std::invalid_argument("mse: empty input");
  auto av = a.values(), bv = b.values();
  const double inv = 1.0 / static_cast<double>(a.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = av[i] - bv[i];
    loss += d * d;
  }
  loss *= inv;
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(
      Tensor::scalar(loss), {ia, ib},
      [ia, ib, inv](Tape& t, std::span<const double> g) {
        const auto& va = t.value(ia).values;
        const auto& vb = t.value(ib).values;
        const double k = 2.0 * inv * g[0];
        if (t.needs_grad(ia)) {
          auto& ga = t.grad_buffer(ia);
          for (std::size_t i = 0; i < va.size(); ++i) ga[i] += k * (va[i] - vb[i]);
        }
        if (t.needs_grad(ib)) {
          auto& gb = t.grad_buffer(ib);
          for (std::size_t i = 0; i < va.size(); ++i) gb[i] -= k * (va[i] - vb[i]);
        }
      },
      "mse");
}

Var kl_to_softmax(Var logits, const Tensor& target_probs, std::span<const std::size_t> nodes) {
  require_rank2(logits, "kl_to_softmax");
  const std::size_t n = logits.rows(), c = logits.cols();
  if (target_probs.rows() != n || target_probs.cols() != c) throw std::invalid_argument("kl_to_softmax: target shape mismatch");
  auto rows = nodes_checked(nodes, n, "kl_to_softmax");
  auto xv = logits.values();
  const double inv = 1.0 / static_cast<double>(rows.size());
  double loss = 0.0;
  std::vector<double> probs(rows.size() * c), targets(rows.size() * c);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double* x = xv.data() + rows[r] * c;
    const double mx = *std::max_element(x, x + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(x[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) {
      const double p = target_probs.values[rows[r] * c + j];
      targets[r * c + j] = p;
      probs[r * c + j] = std::exp(x[j] - lse);
      if (p > 0.0) loss += inv * p * (std::log(p) - (x[j] - lse));
    }
  }
  const std::size_t ix = logits.id();
  return logits.tape().record(
      Tensor::scalar(loss), {ix},
      [ix, rows, probs = std::move(probs), targets = std::move(targets), c, inv](Tape& t, std::span<const double> g) {
        auto& gx = t.grad_buffer(ix);
        for (std::size_t r = 0; r < rows.size(); ++r) {
          double mass = 0.0;
          for (std::size_t j = 0; j < c; ++j) mass += targets[r * c + j];
          for (std::size_t j = 0; j < c; ++j)
            gx[rows[r] * c + j] += g[0] * inv * (mass * probs[r * c + j] - targets[r * c + j]);
        }
      },
      "kl_to_softmax");
}

Tensor softmax_rows(const Tensor& logits, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("softmax_rows: temperature must be positive");
  const std::size_t n = logits.rows(), c = logits.cols();
  Tensor out = Tensor::zeros(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = logits.values.data() + i * c;
    const double mx = *std::max_element(x, x + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out.values[i * c + j] = std::exp((x[j] - mx) / temperature);
      s += out.values[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) out.values[i * c + j] /= s;
  }
  return out;
}

}  // namespace dropdist
