#pragma once

// Dense rank-0/1/2 tensors of doubles plus the recording tape they live on.
// Every differentiable computation in the library is expressed through the
// primitive ops defined here; autodiff.hpp replays the tape in reverse.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace phlearn {

using Shape = std::vector<int>;

inline int shape_size(const Shape& s) {
  int n = 1;
  for (int e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ')';
  return os.str();
}

struct ShapeError : std::runtime_error {
  ShapeError(const std::string& op, const std::string& detail)
      : std::runtime_error("shape mismatch in " + op + ": " + detail) {}
};

enum class Op {
  Leaf,
  Add,
  Mul,  // elementwise
  MatMul,
  Sin,
  Cos,
  Tanh,
  Reciprocal,
  Sum,
  Slice,
  Concat,
  Transpose,
  ScalarMul,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Add: return "add";
    case Op::Mul: return "mul";
    case Op::MatMul: return "matmul";
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Tanh: return "tanh";
    case Op::Reciprocal: return "reciprocal";
    case Op::Sum: return "sum";
    case Op::Slice: return "slice";
    case Op::Concat: return "concat";
    case Op::Transpose: return "transpose";
    case Op::ScalarMul: return "scalar-mul";
  }
  return "?";
}

class Tape;

// Value-semantic handle. A constant Tensor owns its storage; a taped Tensor
// references the node recorded on its tape (append-only, so references stay
// valid). Tensors with node < 0 contribute zero gradients.
struct Tensor {
  Shape shape;
  Tape* tape = nullptr;
  int node = -1;
  std::vector<double> data;  // used only when tape == nullptr

  Tensor() = default;
  Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), data(std::move(v)) {
    if (shape_size(shape) != static_cast<int>(data.size()))
      throw ShapeError("tensor", "shape " + shape_str(shape) + " does not hold " +
                                     std::to_string(data.size()) + " values");
  }

  bool tracked() const { return tape != nullptr && node >= 0; }
  int rank() const { return static_cast<int>(shape.size()); }
  int size() const { return shape_size(shape); }
  int rows() const { return rank() >= 1 ? shape[0] : 1; }
  int cols() const { return rank() == 2 ? shape[1] : 1; }

  // Ref-qualified: on a temporary the storage is returned by value, so
  // `rollout.state_at(i).values()` cannot dangle.
  const std::vector<double>& values() const&;
  std::vector<double> values() const&&;
  double value() const {
    const auto& v = values();
    if (v.size() != 1) throw ShapeError("value", "tensor " + shape_str(shape) + " is not scalar");
    return v[0];
  }
  double at(int i) const { return values()[static_cast<std::size_t>(i)]; }
  double at(int i, int j) const { return values()[static_cast<std::size_t>(i) * cols() + j]; }

  // In-place mutation is reserved for optimizer updates on constants.
  std::vector<double>& mutable_values() {
    if (tracked()) throw std::logic_error("cannot mutate a taped tensor in place");
    return data;
  }
};

struct Node {
  Op op = Op::Leaf;
  int a = -1;
  int b = -1;
  Shape shape;
  std::vector<double> values;
  double scalar = 0.0;  // ScalarMul factor
  int offset = 0;       // Slice start (flat index)
};

class Tape {
 public:
  int size() const { return static_cast<int>(nodes_.size()); }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

  Tensor leaf(const Shape& shape, std::vector<double> values) {
    Tensor t;
    t.shape = shape;
    t.tape = this;
    t.node = push(Op::Leaf, -1, -1, shape, std::move(values));
    return t;
  }
  Tensor leaf(const Tensor& constant) { return leaf(constant.shape, constant.values()); }

  int push(Op op, int a, int b, Shape shape, std::vector<double> values, double scalar = 0.0,
           int offset = 0) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.shape = std::move(shape);
    n.values = std::move(values);
    n.scalar = scalar;
    n.offset = offset;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  // Handle to an already-recorded node.
  Tensor ref(int id) const {
    Tensor t;
    t.tape = const_cast<Tape*>(this);
    t.node = id;
    t.shape = nodes_[static_cast<std::size_t>(id)].shape;
    return t;
  }

 private:
  // deque keeps node references stable while the tape grows
  std::deque<Node> nodes_;
};

inline const std::vector<double>& Tensor::values() const& {
  if (tracked()) return tape->node(node).values;
  return data;
}

inline std::vector<double> Tensor::values() const&& {
  if (tracked()) return tape->node(node).values;
  return data;
}

// ---- constant factories ----------------------------------------------------

inline Tensor zeros(const Shape& s) { return Tensor(s, std::vector<double>(shape_size(s), 0.0)); }
inline Tensor ones(const Shape& s) { return Tensor(s, std::vector<double>(shape_size(s), 1.0)); }
inline Tensor full(const Shape& s, double v) {
  return Tensor(s, std::vector<double>(shape_size(s), v));
}
inline Tensor scalar(double v) { return Tensor(Shape{}, {v}); }
inline Tensor vec(std::vector<double> v) {
  Shape s{static_cast<int>(v.size())};
  return Tensor(s, std::move(v));
}
inline Tensor mat(int r, int c, std::vector<double> v) { return Tensor(Shape{r, c}, std::move(v)); }
inline Tensor eye(int n) {
  Tensor t = zeros(Shape{n, n});
  for (int i = 0; i < n; ++i) t.data[static_cast<std::size_t>(i) * n + i] = 1.0;
  return t;
}

// ---- recording helpers -----------------------------------------------------

namespace detail {

inline Tape* common_tape(const Tensor& a, const Tensor& b) {
  if (a.tracked() && b.tracked() && a.tape != b.tape)
    throw std::logic_error("operands recorded on different tapes");
  return a.tracked() ? a.tape : (b.tracked() ? b.tape : nullptr);
}

inline int on_tape(Tape& tape, const Tensor& t) {
  if (t.tracked()) return t.node;
  return tape.push(Op::Leaf, -1, -1, t.shape, t.values());
}

inline Tensor emit(Tape* tape, Op op, const Tensor& a, const Tensor* b, Shape shape,
                   std::vector<double> values, double scalar = 0.0, int offset = 0) {
  if (!tape) return Tensor(std::move(shape), std::move(values));
  int ia = on_tape(*tape, a);
  int ib = b ? on_tape(*tape, *b) : -1;
  Tensor t;
  t.tape = tape;
  t.shape = shape;
  t.node = tape->push(op, ia, ib, std::move(shape), std::move(values), scalar, offset);
  return t;
}

}  // namespace detail

// ---- primitive ops ----------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape)
    throw ShapeError("add", shape_str(a.shape) + " vs " + shape_str(b.shape));
  const auto& va = a.values();
  const auto& vb = b.values();
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < va.size(); ++i) out[i] = va[i] + vb[i];
  return detail::emit(detail::common_tape(a, b), Op::Add, a, &b, a.shape, std::move(out));
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape)
    throw ShapeError("elementwise-mul", shape_str(a.shape) + " vs " + shape_str(b.shape));
  const auto& va = a.values();
  const auto& vb = b.values();
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < va.size(); ++i) out[i] = va[i] * vb[i];
  return detail::emit(detail::common_tape(a, b), Op::Mul, a, &b, a.shape, std::move(out));
}

namespace detail {
// Canonical (rows, cols) with vectors treated as columns.
inline void matmul_dims(const Tensor& a, const Tensor& b, int& ar, int& ac, int& br, int& bc) {
  if (a.rank() == 0 || b.rank() == 0)
    throw ShapeError("matmul", "rank-0 operand " + shape_str(a.shape) + " x " + shape_str(b.shape));
  ar = a.shape[0];
  ac = a.rank() == 2 ? a.shape[1] : 1;
  br = b.shape[0];
  bc = b.rank() == 2 ? b.shape[1] : 1;
  if (ac != br)
    throw ShapeError("matmul", shape_str(a.shape) + " x " + shape_str(b.shape));
}

inline void matmul_kernel(const double* a, const double* b, double* out, int n, int m, int k) {
  for (int i = 0; i < n * k; ++i) out[i] = 0.0;
  for (int i = 0; i < n; ++i) {
    const double* arow = a + static_cast<std::ptrdiff_t>(i) * m;
    double* orow = out + static_cast<std::ptrdiff_t>(i) * k;
    for (int l = 0; l < m; ++l) {
      const double f = arow[l];
      if (f == 0.0) continue;
      const double* brow = b + static_cast<std::ptrdiff_t>(l) * k;
      for (int j = 0; j < k; ++j) orow[j] += f * brow[j];
    }
  }
}
}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  int ar, ac, br, bc;
  detail::matmul_dims(a, b, ar, ac, br, bc);
  std::vector<double> out(static_cast<std::size_t>(ar) * bc);
  detail::matmul_kernel(a.values().data(), b.values().data(), out.data(), ar, ac, bc);
  Shape s = (b.rank() <= 1) ? Shape{ar} : Shape{ar, bc};
  return detail::emit(detail::common_tape(a, b), Op::MatMul, a, &b, std::move(s), std::move(out));
}

namespace detail {
template <double (*F)(double)>
inline Tensor unary(Op op, const Tensor& a) {
  const auto& va = a.values();
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < va.size(); ++i) out[i] = F(va[i]);
  return emit(a.tape, op, a, nullptr, a.shape, std::move(out));
}
inline double recip(double x) { return 1.0 / x; }
}  // namespace detail

inline Tensor sin(const Tensor& a) { return detail::unary<std::sin>(Op::Sin, a); }
inline Tensor cos(const Tensor& a) { return detail::unary<std::cos>(Op::Cos, a); }
inline Tensor tanh(const Tensor& a) { return detail::unary<std::tanh>(Op::Tanh, a); }
inline Tensor reciprocal(const Tensor& a) { return detail::unary<detail::recip>(Op::Reciprocal, a); }

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return detail::emit(a.tape, Op::Sum, a, nullptr, Shape{}, {s});
}

namespace detail {
// sentinel: "no explicit output shape requested"
inline const Shape kDefaultShape = Shape{-1};
inline bool is_default_shape(const Shape& s) { return s.size() == 1 && s[0] == -1; }
}  // namespace detail

// Flat-range slice of the underlying row-major storage, reinterpreted with
// out_shape (defaults to a vector of length count).
inline Tensor slice(const Tensor& a, int offset, int count,
                    Shape out_shape = detail::kDefaultShape) {
  if (offset < 0 || count < 0 || offset + count > a.size())
    throw ShapeError("slice", "range [" + std::to_string(offset) + "," +
                                  std::to_string(offset + count) + ") of " + shape_str(a.shape));
  if (detail::is_default_shape(out_shape)) out_shape = Shape{count};
  if (shape_size(out_shape) != count)
    throw ShapeError("slice", "out shape " + shape_str(out_shape) + " for count " +
                                  std::to_string(count));
  const auto& va = a.values();
  std::vector<double> out(va.begin() + offset, va.begin() + offset + count);
  return detail::emit(a.tape, Op::Slice, a, nullptr, std::move(out_shape), std::move(out), 0.0,
                      offset);
}

inline Tensor concat(const Tensor& a, const Tensor& b, Shape out_shape = detail::kDefaultShape) {
  const auto& va = a.values();
  const auto& vb = b.values();
  if (detail::is_default_shape(out_shape))
    out_shape = Shape{static_cast<int>(va.size() + vb.size())};
  if (shape_size(out_shape) != static_cast<int>(va.size() + vb.size()))
    throw ShapeError("concat", shape_str(a.shape) + " + " + shape_str(b.shape) + " into " +
                                   shape_str(out_shape));
  std::vector<double> out;
  out.reserve(va.size() + vb.size());
  out.insert(out.end(), va.begin(), va.end());
  out.insert(out.end(), vb.begin(), vb.end());
  return detail::emit(detail::common_tape(a, b), Op::Concat, a, &b, std::move(out_shape),
                      std::move(out));
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() == 0) throw ShapeError("transpose", "rank-0 operand");
  int r = a.rows(), c = a.cols();
  const auto& va = a.values();
  std::vector<double> out(va.size());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      out[static_cast<std::size_t>(j) * r + i] = va[static_cast<std::size_t>(i) * c + j];
  return detail::emit(a.tape, Op::Transpose, a, nullptr, Shape{c, r}, std::move(out));
}

inline Tensor scalar_mul(const Tensor& a, double s) {
  const auto& va = a.values();
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < va.size(); ++i) out[i] = s * va[i];
  return detail::emit(a.tape, Op::ScalarMul, a, nullptr, a.shape, std::move(out), s);
}

// ---- composed helpers (no new primitives) -----------------------------------

inline Tensor neg(const Tensor& a) { return scalar_mul(a, -1.0); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return add(a, neg(b)); }
inline Tensor dot(const Tensor& a, const Tensor& b) { return sum(mul(a, b)); }
inline Tensor square(const Tensor& a) { return mul(a, a); }
inline Tensor reshape(const Tensor& a, Shape s) { return slice(a, 0, a.size(), std::move(s)); }
inline Tensor mean(const Tensor& a) {
  return scalar_mul(sum(a), a.size() > 0 ? 1.0 / a.size() : 0.0);
}

// Row i of a rank-2 tensor as a (1 x cols) matrix.
inline Tensor row(const Tensor& a, int i) {
  return slice(a, i * a.cols(), a.cols(), Shape{1, a.cols()});
}
// Rows [i, i+count) of a rank-2 tensor as a (count x cols) matrix.
inline Tensor rows(const Tensor& a, int i, int count) {
  return slice(a, i * a.cols(), count * a.cols(), Shape{count, a.cols()});
}

inline Tensor stack_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("stack-rows", "no parts");
  int c = parts[0].cols();
  Tensor acc = parts[0];
  int r = parts[0].rows();
  for (std::size_t i = 1; i < parts.size(); ++i) {
    if (parts[i].cols() != c)
      throw ShapeError("stack-rows", "column mismatch " + shape_str(parts[i].shape));
    r += parts[i].rows();
    acc = concat(acc, parts[i], Shape{r, c});
  }
  if (acc.shape != Shape{r, c}) acc = reshape(acc, Shape{r, c});
  return acc;
}

// Broadcast a scalar tensor to the given shape (two matmuls with constant ones).
inline Tensor expand_scalar(const Tensor& s, const Shape& target) {
  int r = target.empty() ? 1 : target[0];
  int c = target.size() == 2 ? target[1] : 1;
  Tensor col = matmul(ones(Shape{r, 1}), reshape(s, Shape{1, 1}));
  Tensor m = matmul(col, ones(Shape{1, c}));
  return reshape(m, target);
}

}  // namespace phlearn
