#include "sptseg/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "blas.hpp"
#include "sptseg/errors.hpp"

namespace sptseg {

void blas::pin_single_thread() {
  static const bool pinned = [] {
    openblas_set_num_threads(1);
    return true;
  }();
  (void)pinned;
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
};

}  // namespace detail

using detail::Node;

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void require_finite(const char* op, std::span<const double> values) {
  // Branch-free scan first: a value is non-finite iff its exponent bits are all set.
  constexpr std::uint64_t kExp = 0x7ff0000000000000ULL;
  std::uint64_t bad = 0;
  for (double v : values) bad |= static_cast<std::uint64_t>((std::bit_cast<std::uint64_t>(v) & kExp) == kExp);
  if (!bad) return;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      std::ostringstream os;
      os << op << ": non-finite value at flat index " << i;
      throw NumericError(os.str());
    }
  }
}

void validate_shape(const Shape& shape, std::size_t n) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != n) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(n) + " values");
  }
}

[[noreturn]] void shape_mismatch(const char* op, const Tensor& a, const Tensor& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                       " and " + shape_str(b.shape()));
}

const Node& node_of(const Tensor& t) {
  if (!t.defined()) throw ContractError("use of an undefined tensor");
  return *t.node();
}

}  // namespace

// Tensor --------------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  validate_shape(shape, data.size());
  require_finite("tensor", data);
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  node_ = std::move(n);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

Tensor Tensor::eye(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return Tensor({n, n}, std::move(v));
}

const Shape& Tensor::shape() const { return node_of(*this).shape; }

std::size_t Tensor::extent(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::size() const { return node_of(*this).value.size(); }

std::span<const double> Tensor::data() const { return node_of(*this).value; }

double Tensor::at(std::size_t r, std::size_t c) const {
  if (rank() != 2) throw DimensionError("at(row, col) needs a rank-2 tensor, got " + shape_str(shape()));
  return data()[r * shape()[1] + c];
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return data()[0];
}

bool Tensor::requires_grad() const { return node_of(*this).requires_grad; }
bool Tensor::is_leaf() const { return node_of(*this).leaf; }
bool Tensor::has_grad() const { return !node_of(*this).grad.empty(); }
std::span<const double> Tensor::grad() const { return node_of(*this).grad; }

void Tensor::zero_grad() const {
  auto& g = node_->grad;
  std::fill(g.begin(), g.end(), 0.0);
}

void Tensor::backward() const {
  Graph graph(*this);
  graph.backward();
}

Tensor Tensor::detach(bool requires_grad) const {
  return Tensor(shape(), node_of(*this).value, requires_grad);
}

std::span<double> Tensor::mutable_data() const {
  if (!node_of(*this).leaf) throw ContractError("mutable_data() on a non-leaf tensor");
  return node_->value;
}

namespace {
thread_local bool grad_disabled = false;
}

NoGradGuard::NoGradGuard() : previous_(grad_disabled) { grad_disabled = true; }
NoGradGuard::~NoGradGuard() { grad_disabled = previous_; }

Tensor make_op_result(const char* op, Shape shape, std::vector<double> value,
                      std::vector<Tensor> inputs, BackwardFn backward) {
  validate_shape(shape, value.size());
  require_finite(op, value);
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  // Results that record no parents are constants, i.e. leaves.
  if (grad_disabled) return Tensor(std::move(n));
  for (const auto& in : inputs) {
    if (node_of(in).requires_grad) n->requires_grad = true;
  }
  if (n->requires_grad) {
    n->leaf = false;
    n->parents.reserve(inputs.size());
    for (const auto& in : inputs) n->parents.push_back(in.handle());
    n->backward = std::move(backward);
  }
  return Tensor(std::move(n));
}

// Graph ---------------------------------------------------------------------

Graph::Graph(const Tensor& root) : root_(root) {
  if (!root.defined()) throw ContractError("backward() on an undefined tensor");
  if (root.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_str(root.shape()));
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS: parents land before children.
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order_.push_back(node);
      stack.pop_back();
    }
  }
}

void Graph::backward() {
  if (order_.empty()) return;
  for (Node* n : order_) {
    if (!n->leaf || n->grad.size() != n->value.size()) {
      n->grad.assign(n->value.size(), 0.0);
    }
  }
  order_.back()->grad[0] = 1.0;

  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node* n = *it;
    if (n->leaf || !n->backward) continue;
    OpContext ctx;
    ctx.out = n->value;
    ctx.grad_out = n->grad;
    ctx.grad_in.reserve(n->parents.size());
    for (auto& p : n->parents) {
      if (p->requires_grad) {
        ctx.grad_in.emplace_back(p->grad);
      } else {
        ctx.grad_in.emplace_back();
      }
    }
    n->backward(ctx);
  }
}

// Operations ----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) shape_mismatch("matmul", a, b);
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  std::vector<double> out(m * n);
  blas::gemm(false, false, m, n, k, 1.0, a.data().data(), k, b.data().data(), n, 0.0, out.data(), n);
  return make_op_result("matmul", {m, n}, std::move(out), {a, b}, [a, b, m, k, n](OpContext& ctx) {
    const double* G = ctx.grad_out.data();
    // dA += G B^T, dB += A^T G
    if (!ctx.grad_in[0].empty()) {
      blas::gemm(false, true, m, k, n, 1.0, G, n, b.data().data(), n, 1.0, ctx.grad_in[0].data(), k);
    }
    if (!ctx.grad_in[1].empty()) {
      blas::gemm(true, false, k, n, m, 1.0, a.data().data(), k, G, n, 1.0, ctx.grad_in[1].data(), n);
    }
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose needs rank 2, got " + shape_str(a.shape()));
  const std::size_t r = a.extent(0), c = a.extent(1);
  std::vector<std::size_t> idx(r * c);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < r; ++j) idx[i * r + j] = j * c + i;
  return gather(a, std::move(idx), {c, r});
}

namespace {

enum class Broadcast { kSame, kRowVector, kScalar };

Broadcast classify(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (b.size() == 1) return Broadcast::kScalar;
  if (b.rank() == 1 && a.rank() >= 2 && a.shape().back() == b.extent(0)) return Broadcast::kRowVector;
  shape_mismatch(op, a, b);
}

// Calls f(i, j) for every flat position i of a, with j the matching index
// into b. Each broadcast mode gets its own loop so the body can vectorize.
template <class F>
inline void for_each_pair(Broadcast mode, std::size_t n, std::size_t width, F&& f) {
  switch (mode) {
    case Broadcast::kSame:
      for (std::size_t i = 0; i < n; ++i) f(i, i);
      break;
    case Broadcast::kRowVector:
      for (std::size_t r = 0; r < n; r += width)
        for (std::size_t j = 0; j < width; ++j) f(r + j, j);
      break;
    case Broadcast::kScalar:
      for (std::size_t i = 0; i < n; ++i) f(i, 0);
      break;
  }
}

enum class BinOp { kAdd, kSub, kMul, kDiv };

Tensor binary(BinOp op, const Tensor& a, const Tensor& b) {
  static constexpr const char* names[] = {"add", "sub", "mul", "div"};
  const char* name = names[static_cast<int>(op)];
  const Broadcast mode = classify(name, a, b);
  const std::size_t width = b.size();
  const double* A = a.data().data();
  const double* B = b.data().data();
  const std::size_t n = a.size();
  std::vector<double> out(n);
  double* O = out.data();
  switch (op) {
    case BinOp::kAdd: for_each_pair(mode, n, width, [&](std::size_t i, std::size_t j) { O[i] = A[i] + B[j]; }); break;
    case BinOp::kSub: for_each_pair(mode, n, width, [&](std::size_t i, std::size_t j) { O[i] = A[i] - B[j]; }); break;
    case BinOp::kMul: for_each_pair(mode, n, width, [&](std::size_t i, std::size_t j) { O[i] = A[i] * B[j]; }); break;
    case BinOp::kDiv:
      for (double y : b.data())
        if (y == 0.0) throw ContractError("div: division by zero");
      for_each_pair(mode, n, width, [&](std::size_t i, std::size_t j) { O[i] = A[i] / B[j]; });
      break;
  }
  return make_op_result(name, a.shape(), std::move(out), {a, b}, [a, b, op, mode, width](OpContext& ctx) {
    const double* G = ctx.grad_out.data();
    const double* A = a.data().data();
    const double* B = b.data().data();
    const std::size_t n = ctx.grad_out.size();
    double* ga = ctx.grad_in[0].empty() ? nullptr : ctx.grad_in[0].data();
    double* gb = ctx.grad_in[1].empty() ? nullptr : ctx.grad_in[1].data();
    switch (op) {
      case BinOp::kAdd:
        if (ga) for (std::size_t i = 0; i < n; ++i) ga[i] += G[i];
        if (gb) for_each_pair(mode, n, width, [&](std::size_t i, std::size_t j) { gb[j] += G[i]; });
        break;
      case BinOp::kSub:
        if (ga) for (std::size_t i = 0; i < n; ++i) ga[i] += G[i];
        if (gb) for_each_pair(mode, n, width, [&](std::size_t i, std::size_t j) { gb[j] -= G[i]; });
        break;
      case BinOp::kMul:
        if (ga) for_each_pair(mode, n, width, [&](std::size_t i, std::size_t j) { ga[i] += G[i] * B[j]; });
        if (gb) for_each_pair(mode, n, width, [&](std::size_t i, std::size_t j) { gb[j] += G[i] * A[i]; });
        break;
      case BinOp::kDiv:
        if (ga) for_each_pair(mode, n, width, [&](std::size_t i, std::size_t j) { ga[i] += G[i] / B[j]; });
        if (gb) {
          for_each_pair(mode, n, width,
                        [&](std::size_t i, std::size_t j) { gb[j] -= G[i] * A[i] / (B[j] * B[j]); });
        }
        break;
    }
  });
}

template <class Fwd, class Deriv>
Tensor unary(const char* name, const Tensor& a, Fwd fwd, Deriv deriv) {
  auto A = a.data();
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = fwd(A[i]);
  return make_op_result(name, a.shape(), std::move(out), {a}, [a, deriv](OpContext& ctx) {
    auto A = a.data();
    for (std::size_t i = 0; i < A.size(); ++i) {
      ctx.grad_in[0][i] += ctx.grad_out[i] * deriv(A[i], ctx.out[i]);
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(BinOp::kAdd, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(BinOp::kSub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(BinOp::kMul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(BinOp::kDiv, a, b); }

Tensor add(const Tensor& a, double b) {
  return unary("add_scalar", a, [b](double x) { return x + b; }, [](double, double) { return 1.0; });
}

Tensor mul(const Tensor& a, double b) {
  return unary("mul_scalar", a, [b](double x) { return x * b; }, [b](double, double) { return b; });
}

Tensor neg(const Tensor& a) { return mul(a, -1.0); }

Tensor exp(const Tensor& a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  for (double x : a.data()) {
    if (!(x > 0.0)) throw ContractError("log: argument must be positive");
  }
  return unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  for (double x : a.data()) {
    if (!(x > 0.0)) throw ContractError("sqrt: argument must be positive");
  }
  return unary("sqrt", a, [](double x) { return std::sqrt(x); },
               [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& a) {
  return unary("square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x;
  return make_op_result("sum", {1}, {s}, {a}, [](OpContext& ctx) {
    const double g = ctx.grad_out[0];
    for (auto& v : ctx.grad_in[0]) v += g;
  });
}

Tensor mean(const Tensor& a) { return mul(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor sum_rows(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("sum_rows needs rank 2, got " + shape_str(a.shape()));
  const std::size_t n = a.extent(0), d = a.extent(1);
  auto A = a.data();
  std::vector<double> out(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += A[i * d + j];
  return make_op_result("sum_rows", {d}, std::move(out), {a}, [n, d](OpContext& ctx) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) ctx.grad_in[0][i * d + j] += ctx.grad_out[j];
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto& s = x.shape();
  if (axis >= s.size()) throw DimensionError("softmax: axis out of range for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  auto X = x.data();
  std::vector<double> out(X.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = X[base];
      for (std::size_t k = 1; k < len; ++k) mx = std::max(mx, X[base + k * inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        const double e = std::exp(X[base + k * inner] - mx);
        out[base + k * inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < len; ++k) out[base + k * inner] /= z;
    }
  }
  return make_op_result("softmax", s, std::move(out), {x}, [outer, inner, len](OpContext& ctx) {
    auto Y = ctx.out;
    auto G = ctx.grad_out;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < len; ++k) dot += G[base + k * inner] * Y[base + k * inner];
        for (std::size_t k = 0; k < len; ++k) {
          const std::size_t p = base + k * inner;
          ctx.grad_in[0][p] += Y[p] * (G[p] - dot);
        }
      }
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_op_result("reshape", std::move(shape), std::move(out), {a}, [](OpContext& ctx) {
    for (std::size_t i = 0; i < ctx.grad_out.size(); ++i) ctx.grad_in[0][i] += ctx.grad_out[i];
  });
}

Tensor gather(const Tensor& a, std::vector<std::size_t> index, Shape shape) {
  if (shape_numel(shape) != index.size()) {
    throw DimensionError("gather: index count does not match " + shape_str(shape));
  }
  auto A = a.data();
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= A.size()) throw DimensionError("gather: index out of range");
    out[i] = A[index[i]];
  }
  return make_op_result("gather", std::move(shape), std::move(out), {a},
                        [index = std::move(index)](OpContext& ctx) {
                          for (std::size_t i = 0; i < index.size(); ++i) {
                            ctx.grad_in[0][index[i]] += ctx.grad_out[i];
                          }
                        });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  if (a.rank() != 2 || begin >= end || end > a.extent(0)) {
    throw DimensionError("slice_rows: bad range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") for " + shape_str(a.shape()));
  }
  const std::size_t d = a.extent(1);
  auto A = a.data();
  std::vector<double> out(A.begin() + begin * d, A.begin() + end * d);
  return make_op_result("slice_rows", {end - begin, d}, std::move(out), {a}, [begin, d](OpContext& ctx) {
    const std::size_t off = begin * d;
    for (std::size_t i = 0; i < ctx.grad_out.size(); ++i) ctx.grad_in[0][off + i] += ctx.grad_out[i];
  });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  if (a.rank() != 2 || begin >= end || end > a.extent(1)) {
    throw DimensionError("slice_cols: bad range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") for " + shape_str(a.shape()));
  }
  const std::size_t n = a.extent(0), d = a.extent(1), w = end - begin;
  auto A = a.data();
  std::vector<double> out(n * w);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = A[i * d + begin + j];
  return make_op_result("slice_cols", {n, w}, std::move(out), {a}, [n, d, w, begin](OpContext& ctx) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) ctx.grad_in[0][i * d + begin + j] += ctx.grad_out[i * w + j];
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  std::size_t d = 0, rows = 0;
  for (const auto& p : parts) {
    const std::size_t pd = p.rank() == 1 ? p.extent(0) : p.extent(1);
    if (p.rank() > 2) throw DimensionError("concat_rows: rank > 2 in " + shape_str(p.shape()));
    if (d == 0) d = pd;
    if (pd != d) shape_mismatch("concat_rows", parts.front(), p);
    rows += p.rank() == 1 ? 1 : p.extent(0);
  }
  std::vector<double> out;
  out.reserve(rows * d);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) sizes.push_back(p.size());
  return make_op_result("concat_rows", {rows, d}, std::move(out), parts, [sizes](OpContext& ctx) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      if (!ctx.grad_in[k].empty()) {
        for (std::size_t i = 0; i < sizes[k]; ++i) ctx.grad_in[k][i] += ctx.grad_out[off + i];
      }
      off += sizes[k];
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t n = parts.front().extent(0);
  std::size_t width = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.extent(0) != n) shape_mismatch("concat_cols", parts.front(), p);
    widths.push_back(p.extent(1));
    width += p.extent(1);
  }
  std::vector<double> out(n * width);
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto P = parts[k].data();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out[i * width + col + j] = P[i * widths[k] + j];
    col += widths[k];
  }
  return make_op_result("concat_cols", {n, width}, std::move(out), parts, [n, width, widths](OpContext& ctx) {
    std::size_t col = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (!ctx.grad_in[k].empty()) {
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j)
            ctx.grad_in[k][i * widths[k] + j] += ctx.grad_out[i * width + col + j];
      }
      col += widths[k];
    }
  });
}

Tensor row(const Tensor& a, std::size_t i) {
  if (a.rank() != 2) throw DimensionError("row needs rank 2, got " + shape_str(a.shape()));
  return reshape(slice_rows(a, i, i + 1), {a.extent(1)});
}

// Gradient checking -----------------------------------------------------------

double GradCheckReport::worst() const {
  double w = 0.0;
  for (double e : max_rel_error) w = std::max(w, e);
  return w;
}

bool GradCheckReport::passed(double tolerance) const {
  return !non_finite && worst() < tolerance;
}

GradCheckReport check_gradients(const ExpressionBuilder& f, const std::vector<Tensor>& inputs,
                                double step, double floor) {
  GradCheckReport report;
  std::vector<Tensor> leaves;
  leaves.reserve(inputs.size());
  for (const auto& in : inputs) leaves.push_back(in.detach(true));

  try {
    Tensor out = f(leaves);
    out.backward();
  } catch (const NumericError& e) {
    report.non_finite = true;
    report.message = e.what();
    report.max_rel_error.assign(inputs.size(), 0.0);
    return report;
  }

  auto eval = [&]() { return f(leaves).item(); };
  for (auto& leaf : leaves) {
    double worst = 0.0;
    auto values = leaf.mutable_data();
    std::vector<double> analytic(leaf.size(), 0.0);
    if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      double numeric = 0.0;
      try {
        values[i] = orig + step;
        const double up = eval();
        values[i] = orig - step;
        const double down = eval();
        numeric = (up - down) / (2.0 * step);
      } catch (const NumericError& e) {
        values[i] = orig;
        report.non_finite = true;
        report.message = e.what();
        continue;
      }
      values[i] = orig;
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    report.max_rel_error.push_back(worst);
  }
  return report;
}

}  // namespace sptseg
