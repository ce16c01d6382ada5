#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dropdist {

/// Dense row-major array of doubles. Rank 1 or 2 in practice.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until a backward pass writes into it

  Tensor() = default;
  Tensor(std::vector<std::size_t> shape_, std::vector<double> values_, bool requires_grad_ = false);

  static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false);
  static Tensor from_rows(const std::vector<std::vector<double>>& rows);
  static Tensor scalar(double v);

  std::size_t size() const { return values.size(); }
  std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
  std::size_t cols() const;

  double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

  void zero_grad();
  bool has_grad() const { return !grad.empty(); }
};

std::size_t shape_product(const std::vector<std::size_t>& shape);
std::string shape_string(const std::vector<std::size_t>& shape);

/// Throws std::domain_error naming `op` when any value is NaN or infinite.
void check_finite(std::span<const double> values, const char* op);

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const std::vector<std::size_t>& shape() const;
  std::span<const double> values() const;
  std::size_t rows() const;
  std::size_t cols() const;
  std::size_t size() const { return values().size(); }
  double item() const;
  bool needs_grad() const;

  /// Copy of the value as a standalone Tensor.
  Tensor to_tensor() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Ordered record of primitive operations for reverse-mode differentiation.
///
/// Leaves either reference an external Tensor (param/constant) or own a copy.
/// Referenced tensors must outlive the tape. Records are appended in
/// evaluation order, so every operand of record k has id < k.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::span<const double> grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf whose gradient accumulates into `t.grad` on backward.
  Var param(Tensor& t);
  /// Leaf that never receives gradients. `t` must outlive the tape.
  Var constant(const Tensor& t);
  /// Leaf owning its value; no gradient.
  Var constant(Tensor&& t);

  /// Appends a record computed from `inputs`. Used by the op library.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward, const char* op);

  /// Seeds d(out)/d(out) = 1 for a scalar output and propagates to every
  /// param leaf. Leaf gradients accumulate across calls.
  void backward(Var out);
  /// Propagates an arbitrary seed gradient of the same shape as `out`.
  void backward(Var out, std::span<const double> seed);

  /// Gradient buffer of record `id`, allocated zeroed on first use.
  std::vector<double>& grad_buffer(std::size_t id);

  /// Keeps `value` alive for the tape's lifetime (e.g. an EdgeIndex that
  /// spmm records reference during backward).
  template <class T>
  const T& own(T value) {
    auto p = std::make_shared<T>(std::move(value));
    const T& ref = *p;
    owned_.push_back(std::move(p));
    return ref;
  }

  const Tensor& value(std::size_t id) const;
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor* sink = nullptr;
    bool needs_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::vector<double> grad;
  };
  std::vector<Node> nodes_;
  std::vector<std::shared_ptr<const void>> owned_;
};

/// Sparse message-passing structure: out[dst] += w * x[src] for each entry.
struct EdgeIndex {
  std::size_t num_nodes = 0;
  std::vector<std::size_t> src;
  std::vector<std::size_t> dst;

  std::size_t size() const { return src.size(); }
};

// ---- differentiable primitives ----

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// x[n x d] + bias[1 x d] broadcast over rows.
Var add_row(Var x, Var bias);
Var sum(Var a);
Var mean(Var a);
/// out[dst[e]] += weights[e] * x[src[e]]; differentiable in weights and x.
Var spmm(const EdgeIndex& edges, Var weights, Var x);
/// Rows of x selected by idx, shape [idx.size() x cols].
Var gather_rows(Var x, std::span<const std::size_t> idx);
/// Concatenates along columns; all inputs share the row count.
Var concat_cols(std::span<const Var> parts);

Var relu(Var x);
Var elu(Var x, double alpha = 1.0);
Var leaky_relu(Var x, double slope);
Var log_softmax_rows(Var x);
/// Softmax of each segment of `scores` (flat, length E). Every segment in
/// [0, num_segments) must be non-empty.
Var segment_softmax(Var scores, std::span<const std::size_t> segment, std::size_t num_segments);

// ---- losses: all return a scalar ----

/// Mean over `nodes` of -log softmax(logits)[label].
Var cross_entropy(Var logits, std::span<const int> labels, std::span<const std::size_t> nodes);
/// Mean over `nodes` x classes of the numerically stable logistic loss.
Var bce_with_logits(Var logits, const Tensor& targets, std::span<const std::size_t> nodes);
/// Mean squared difference over every entry.
Var mse(Var a, Var b);
/// Mean over `nodes` of KL(target_probs || softmax(logits)).
Var kl_to_softmax(Var logits, const Tensor& target_probs, std::span<const std::size_t> nodes);
/// Mean over `nodes` x classes of binary KL(target || sigmoid(logits)).
Var binary_kl_to_sigmoid(Var logits, const Tensor& target_probs, std::span<const std::size_t> nodes);

/// Row-wise softmax of a plain tensor (no tape).
Tensor softmax_rows(const Tensor& logits, double temperature = 1.0);

}  // namespace dropdist
