#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace sptseg {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor;
struct OpContext;
using BackwardFn = std::function<void(OpContext&)>;

/// Dense row-major tensor of doubles with optional reverse-mode gradient
/// tracking.
///
/// A Tensor is a cheap handle; copies share the underlying node. Values are
/// fixed once constructed. The only mutation paths are gradient accumulation
/// during backward() and in-place updates of leaf parameters through
/// mutable_data(), which the optimizer uses.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor eye(std::size_t n);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t extent(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> data() const;
  double operator[](std::size_t i) const { return data()[i]; }
  double at(std::size_t row, std::size_t col) const;
  double item() const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad() const;

  /// Backpropagates from this scalar. Leaf gradients accumulate across calls.
  void backward() const;

  /// Copy of the values with no graph history.
  Tensor detach(bool requires_grad = false) const;

  /// Writable view of a leaf's values. Throws ContractError on non-leaves.
  std::span<double> mutable_data() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& handle() const { return node_; }

 private:
  friend Tensor make_op_result(const char*, Shape, std::vector<double>,
                               std::vector<Tensor>, BackwardFn);
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Passed to an op's backward closure. grad_in[i] is empty when input i does
/// not require a gradient; otherwise the closure must accumulate (+=) into it.
struct OpContext {
  std::span<const double> out;
  std::span<const double> grad_out;
  std::vector<std::span<double>> grad_in;
};

/// Registers a computed value as a graph node. `value` is checked for
/// finiteness; a non-finite entry raises NumericError naming `op`.
Tensor make_op_result(const char* op, Shape shape, std::vector<double> value,
                      std::vector<Tensor> inputs, BackwardFn backward);

/// While alive, ops on this thread record no graph history (evaluation
/// mode). Results never require gradients.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Reverse topological schedule rooted at a scalar tensor. Each node is
/// visited exactly once during backward().
class Graph {
 public:
  explicit Graph(const Tensor& root);
  std::size_t size() const { return order_.size(); }
  void backward();

 private:
  Tensor root_;
  std::vector<detail::Node*> order_;
};

// Core operations ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// b may be a tensor of equal shape, a vector broadcast along the leading
// (token) axis, or a single-element tensor.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, double b);
Tensor mul(const Tensor& a, double b);

Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Sum over the leading axis: [N x D] -> [D].
Tensor sum_rows(const Tensor& a);

Tensor softmax(const Tensor& x, std::size_t axis);

Tensor reshape(const Tensor& a, Shape shape);
/// out.flat[i] = a.flat[index[i]]; covers permutations, transposes and
/// window partitioning. Backward scatter-adds.
Tensor gather(const Tensor& a, std::vector<std::size_t> index, Shape shape);

// Row/column slicing on rank-2 tensors.
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
/// Row i of a rank-2 tensor as a vector.
Tensor row(const Tensor& a, std::size_t i);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, b); }
inline Tensor operator+(const Tensor& a, double b) { return add(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// Gradient checking --------------------------------------------------------

struct GradCheckReport {
  std::vector<double> max_rel_error;  // one entry per input
  bool non_finite = false;
  std::string message;

  double worst() const;
  bool passed(double tolerance) const;
};

using ExpressionBuilder = std::function<Tensor(const std::vector<Tensor>&)>;

/// Compares autodiff gradients against central finite differences.
/// Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps
/// near-zero entries from dominating.
GradCheckReport check_gradients(const ExpressionBuilder& f,
                                const std::vector<Tensor>& inputs,
                                double step = 1e-5, double floor = 1e-6);

}  // namespace sptseg
