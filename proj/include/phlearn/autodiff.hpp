#pragma once

// Reverse-mode differentiation over the tape in tensor.hpp.
//
// Two sweeps share the same per-op rules:
//   backward()  - raw-value accumulation, used by the training loop;
//   grad_wrt()  - emits the adjoint computation as new tape nodes, so the
//                 returned gradients are themselves differentiable (needed to
//                 differentiate through dH/dq, dH/dp inside a model RHS).

#include <cstring>
#include <memory>
#include <optional>
#include <vector>

#include "phlearn/tensor.hpp"

namespace phlearn {

// Raw adjoint buffers: allocated uninitialized and written with an assigning
// pass on first touch, accumulating afterwards.
struct Gradients {
  std::vector<std::unique_ptr<double[]>> by_node;
  long visited = 0;  // nodes touched by the sweep

  bool has(int node) const {
    return node >= 0 && node < static_cast<int>(by_node.size()) &&
           by_node[static_cast<std::size_t>(node)] != nullptr;
  }
  // Gradient for a taped tensor; zeros when it never influenced the loss.
  Tensor at(const Tensor& t) const {
    if (t.tracked() && has(t.node)) {
      const double* p = by_node[static_cast<std::size_t>(t.node)].get();
      return Tensor(t.shape, std::vector<double>(p, p + t.size()));
    }
    return zeros(t.shape);
  }
};

// Accumulates d(loss)/d(node) for every tape node feeding the scalar loss.
// Each node is visited exactly once, in reverse recording order.
inline Gradients backward(const Tensor& loss) {
  if (!loss.tracked()) throw std::logic_error("backward: loss is not on a tape");
  if (loss.size() != 1)
    throw ShapeError("backward", "loss " + shape_str(loss.shape) + " is not scalar");
  const Tape& tape = *loss.tape;

  Gradients g;
  g.by_node.resize(static_cast<std::size_t>(loss.node) + 1);
  g.by_node[static_cast<std::size_t>(loss.node)] = std::make_unique<double[]>(1);
  g.by_node[static_cast<std::size_t>(loss.node)][0] = 1.0;

  // returns the buffer and whether this is its first contribution
  auto buf = [&](int node, int size, bool& fresh) {
    auto& slot = g.by_node[static_cast<std::size_t>(node)];
    fresh = slot == nullptr;
    if (fresh) slot.reset(new double[static_cast<std::size_t>(size)]);
    return slot.get();
  };

  for (int i = loss.node; i >= 0; --i) {
    ++g.visited;
    const double* out = g.by_node[static_cast<std::size_t>(i)].get();
    if (!out) continue;
    const Node& n = tape.node(i);
    const std::size_t osz = n.values.size();
    bool fresh = false;
    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::Add: {
        double* ga = buf(n.a, static_cast<int>(osz), fresh);
        if (fresh) std::memcpy(ga, out, osz * sizeof(double));
        else
          for (std::size_t j = 0; j < osz; ++j) ga[j] += out[j];
        double* gb = buf(n.b, static_cast<int>(osz), fresh);
        if (fresh) std::memcpy(gb, out, osz * sizeof(double));
        else
          for (std::size_t j = 0; j < osz; ++j) gb[j] += out[j];
        break;
      }
      case Op::Mul: {
        const auto& va = tape.node(n.a).values;
        const auto& vb = tape.node(n.b).values;
        double* ga = buf(n.a, static_cast<int>(osz), fresh);
        if (fresh)
          for (std::size_t j = 0; j < osz; ++j) ga[j] = out[j] * vb[j];
        else
          for (std::size_t j = 0; j < osz; ++j) ga[j] += out[j] * vb[j];
        double* gb = buf(n.b, static_cast<int>(osz), fresh);
        if (fresh)
          for (std::size_t j = 0; j < osz; ++j) gb[j] = out[j] * va[j];
        else
          for (std::size_t j = 0; j < osz; ++j) gb[j] += out[j] * va[j];
        break;
      }
      case Op::MatMul: {
        const Node& na = tape.node(n.a);
        const Node& nb = tape.node(n.b);
        const int nn = na.shape[0];
        const int m = na.shape.size() == 2 ? na.shape[1] : 1;
        const int k = nb.shape.size() == 2 ? nb.shape[1] : 1;
        double* ga = buf(n.a, nn * m, fresh);
        if (fresh) std::memset(ga, 0, static_cast<std::size_t>(nn) * m * sizeof(double));
        double* gb = buf(n.b, m * k, fresh);
        if (fresh) std::memset(gb, 0, static_cast<std::size_t>(m) * k * sizeof(double));
        const double* A = na.values.data();
        const double* B = nb.values.data();
        // dA += G B^T (row-block dot products), dB += A^T G
        for (int r = 0; r < nn; ++r) {
          const double* orow = out + static_cast<std::ptrdiff_t>(r) * k;
          double* garow = ga + static_cast<std::ptrdiff_t>(r) * m;
          const double* arow = A + static_cast<std::ptrdiff_t>(r) * m;
          for (int l = 0; l < m; ++l) {
            const double* brow = B + static_cast<std::ptrdiff_t>(l) * k;
            double acc = 0.0;
            for (int j = 0; j < k; ++j) acc += orow[j] * brow[j];
            garow[l] += acc;
            const double a = arow[l];
            if (a != 0.0) {
              double* gbrow = gb + static_cast<std::ptrdiff_t>(l) * k;
              for (int j = 0; j < k; ++j) gbrow[j] += a * orow[j];
            }
          }
        }
        break;
      }
      case Op::Sin: {
        const auto& va = tape.node(n.a).values;
        double* ga = buf(n.a, static_cast<int>(osz), fresh);
        if (fresh)
          for (std::size_t j = 0; j < osz; ++j) ga[j] = out[j] * std::cos(va[j]);
        else
          for (std::size_t j = 0; j < osz; ++j) ga[j] += out[j] * std::cos(va[j]);
        break;
      }
      case Op::Cos: {
        const auto& va = tape.node(n.a).values;
        double* ga = buf(n.a, static_cast<int>(osz), fresh);
        if (fresh)
          for (std::size_t j = 0; j < osz; ++j) ga[j] = -out[j] * std::sin(va[j]);
        else
          for (std::size_t j = 0; j < osz; ++j) ga[j] -= out[j] * std::sin(va[j]);
        break;
      }
      case Op::Tanh: {
        const double* t = n.values.data();
        double* ga = buf(n.a, static_cast<int>(osz), fresh);
        if (fresh)
          for (std::size_t j = 0; j < osz; ++j) ga[j] = out[j] * (1.0 - t[j] * t[j]);
        else
          for (std::size_t j = 0; j < osz; ++j) ga[j] += out[j] * (1.0 - t[j] * t[j]);
        break;
      }
      case Op::Reciprocal: {
        const double* r = n.values.data();
        double* ga = buf(n.a, static_cast<int>(osz), fresh);
        if (fresh)
          for (std::size_t j = 0; j < osz; ++j) ga[j] = -out[j] * r[j] * r[j];
        else
          for (std::size_t j = 0; j < osz; ++j) ga[j] -= out[j] * r[j] * r[j];
        break;
      }
      case Op::Sum: {
        const std::size_t sz = static_cast<std::size_t>(shape_size(tape.node(n.a).shape));
        double* ga = buf(n.a, static_cast<int>(sz), fresh);
        if (fresh)
          for (std::size_t j = 0; j < sz; ++j) ga[j] = out[0];
        else
          for (std::size_t j = 0; j < sz; ++j) ga[j] += out[0];
        break;
      }
      case Op::Slice: {
        const std::size_t sz = static_cast<std::size_t>(shape_size(tape.node(n.a).shape));
        double* ga = buf(n.a, static_cast<int>(sz), fresh);
        if (fresh) std::memset(ga, 0, sz * sizeof(double));
        for (std::size_t j = 0; j < osz; ++j) ga[static_cast<std::size_t>(n.offset) + j] += out[j];
        break;
      }
      case Op::Concat: {
        const std::size_t sa = static_cast<std::size_t>(shape_size(tape.node(n.a).shape));
        const std::size_t sb = static_cast<std::size_t>(shape_size(tape.node(n.b).shape));
        double* ga = buf(n.a, static_cast<int>(sa), fresh);
        if (fresh) std::memcpy(ga, out, sa * sizeof(double));
        else
          for (std::size_t j = 0; j < sa; ++j) ga[j] += out[j];
        double* gb = buf(n.b, static_cast<int>(sb), fresh);
        if (fresh) std::memcpy(gb, out + sa, sb * sizeof(double));
        else
          for (std::size_t j = 0; j < sb; ++j) gb[j] += out[sa + j];
        break;
      }
      case Op::Transpose: {
        const Node& na = tape.node(n.a);
        const int r = na.shape[0];
        const int c = na.shape.size() == 2 ? na.shape[1] : 1;
        double* ga = buf(n.a, r * c, fresh);
        if (fresh)
          for (int ii = 0; ii < r; ++ii)
            for (int jj = 0; jj < c; ++jj)
              ga[static_cast<std::size_t>(ii) * c + jj] =
                  out[static_cast<std::size_t>(jj) * r + ii];
        else
          for (int ii = 0; ii < r; ++ii)
            for (int jj = 0; jj < c; ++jj)
              ga[static_cast<std::size_t>(ii) * c + jj] +=
                  out[static_cast<std::size_t>(jj) * r + ii];
        break;
      }
      case Op::ScalarMul: {
        double* ga = buf(n.a, static_cast<int>(osz), fresh);
        if (fresh)
          for (std::size_t j = 0; j < osz; ++j) ga[j] = n.scalar * out[j];
        else
          for (std::size_t j = 0; j < osz; ++j) ga[j] += n.scalar * out[j];
        break;
      }
    }
  }
  return g;
}

// Gradients of a scalar w.r.t. the given tensors, emitted as new tape nodes so
// they stay differentiable. A tensor the scalar does not depend on yields a
// constant zero tensor of the same shape.
//
// The sweep is restricted to nodes that lie on a path from some requested
// input to the scalar; without this, a gradient taken inside step k of an
// unrolled rollout would drag adjoints through every earlier step.
inline std::vector<Tensor> grad_wrt(const Tensor& scalar_out, const std::vector<Tensor>& inputs) {
  if (!scalar_out.tracked()) throw std::logic_error("grad_wrt: scalar is not on a tape");
  if (scalar_out.size() != 1)
    throw ShapeError("grad_wrt", "expected scalar, got " + shape_str(scalar_out.shape));
  Tape& tape = *scalar_out.tape;

  // needed[x]: x is a requested input or depends on one
  std::vector<char> needed(static_cast<std::size_t>(scalar_out.node) + 1, 0);
  for (const Tensor& in : inputs)
    if (in.tracked() && in.tape == &tape && in.node <= scalar_out.node)
      needed[static_cast<std::size_t>(in.node)] = 1;
  for (int i = 0; i <= scalar_out.node; ++i) {
    if (needed[static_cast<std::size_t>(i)]) continue;
    const Node& n = tape.node(i);
    if ((n.a >= 0 && needed[static_cast<std::size_t>(n.a)]) ||
        (n.b >= 0 && needed[static_cast<std::size_t>(n.b)]))
      needed[static_cast<std::size_t>(i)] = 1;
  }
  if (!needed[static_cast<std::size_t>(scalar_out.node)]) {
    std::vector<Tensor> zero_out;
    zero_out.reserve(inputs.size());
    for (const Tensor& in : inputs) zero_out.push_back(zeros(in.shape));
    return zero_out;
  }

  std::vector<std::optional<Tensor>> adj(static_cast<std::size_t>(scalar_out.node) + 1);
  adj[static_cast<std::size_t>(scalar_out.node)] = ones(scalar_out.shape);

  auto accumulate = [&](int node, Tensor contrib) {
    if (!needed[static_cast<std::size_t>(node)]) return;
    const Shape& target = tape.node(node).shape;
    if (contrib.shape != target) contrib = reshape(contrib, target);
    auto& slot = adj[static_cast<std::size_t>(node)];
    slot = slot ? add(*slot, contrib) : contrib;
  };

  auto want = [&](int node) { return node >= 0 && needed[static_cast<std::size_t>(node)]; };

  for (int i = scalar_out.node; i >= 0; --i) {
    if (!adj[static_cast<std::size_t>(i)]) continue;
    const Tensor g = *adj[static_cast<std::size_t>(i)];
    const Node n = tape.node(i);  // copy: node storage may grow as we emit
    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::Add:
        if (want(n.a)) accumulate(n.a, g);
        if (want(n.b)) accumulate(n.b, g);
        break;
      case Op::Mul:
        if (want(n.a)) accumulate(n.a, mul(g, tape.ref(n.b)));
        if (want(n.b)) accumulate(n.b, mul(g, tape.ref(n.a)));
        break;
      case Op::MatMul: {
        const Tensor A = tape.ref(n.a);
        const Tensor B = tape.ref(n.b);
        const int nn = A.rows(), k = B.cols();
        const Tensor g2 = (g.rank() == 2) ? g : reshape(g, Shape{nn, k});
        if (want(n.a)) accumulate(n.a, matmul(g2, transpose(B)));
        if (want(n.b)) accumulate(n.b, matmul(transpose(A), g2));
        break;
      }
      case Op::Sin:
        if (want(n.a)) accumulate(n.a, mul(g, cos(tape.ref(n.a))));
        break;
      case Op::Cos:
        if (want(n.a)) accumulate(n.a, neg(mul(g, sin(tape.ref(n.a)))));
        break;
      case Op::Tanh:
        if (want(n.a)) {
          const Tensor t = tape.ref(i);
          accumulate(n.a, mul(g, sub(ones(t.shape), mul(t, t))));
        }
        break;
      case Op::Reciprocal:
        if (want(n.a)) {
          const Tensor r = tape.ref(i);
          accumulate(n.a, neg(mul(g, mul(r, r))));
        }
        break;
      case Op::Sum:
        if (want(n.a)) accumulate(n.a, expand_scalar(g, tape.node(n.a).shape));
        break;
      case Op::Slice:
        if (want(n.a)) {
          const int total = shape_size(tape.node(n.a).shape);
          const int count = g.size();
          Tensor acc = reshape(g, Shape{count});
          if (n.offset > 0) acc = concat(zeros(Shape{n.offset}), acc);
          if (n.offset + count < total) acc = concat(acc, zeros(Shape{total - n.offset - count}));
          accumulate(n.a, acc);
        }
        break;
      case Op::Concat: {
        const int sa = shape_size(tape.node(n.a).shape);
        const int sb = shape_size(tape.node(n.b).shape);
        if (want(n.a)) accumulate(n.a, slice(g, 0, sa));
        if (want(n.b)) accumulate(n.b, slice(g, sa, sb));
        break;
      }
      case Op::Transpose:
        if (want(n.a)) accumulate(n.a, transpose(g));
        break;
      case Op::ScalarMul:
        if (want(n.a)) accumulate(n.a, scalar_mul(g, n.scalar));
        break;
    }
  }

  std::vector<Tensor> out;
  out.reserve(inputs.size());
  for (const Tensor& in : inputs) {
    if (in.tracked() && in.node <= scalar_out.node && adj[static_cast<std::size_t>(in.node)])
      out.push_back(*adj[static_cast<std::size_t>(in.node)]);
    else
      out.push_back(zeros(in.shape));
  }
  return out;
}

inline Tensor grad_wrt(const Tensor& scalar_out, const Tensor& input) {
  return grad_wrt(scalar_out, std::vector<Tensor>{input})[0];
}

}  // namespace phlearn
