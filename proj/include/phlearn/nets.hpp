#pragma once

// Function approximators: plain tanh MLPs and lower-triangular-factor nets
// whose output L L^T is positive semi-definite by construction (plus eps*I on
// the diagonal when a strictly positive definite matrix is required).
//
// Parameters are named constant tensors owned by the net; attach() produces
// the per-tape handles that forward() consumes, so the same forward code runs
// in recorded (training) and plain-value (evaluation) mode.

#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "phlearn/rng.hpp"
#include "phlearn/tensor.hpp"

namespace phlearn {

struct ParamRef {
  std::string name;
  Tensor* value;
};
using ParamRefs = std::vector<ParamRef>;

inline long param_count(const ParamRefs& refs) {
  long n = 0;
  for (const auto& r : refs) n += r.value->size();
  return n;
}

struct MlpSpec {
  int input = 1;
  std::vector<int> hidden = {64, 64};
  int output = 1;
};

class Mlp {
 public:
  Mlp() = default;
  Mlp(std::string name, MlpSpec spec) : name_(std::move(name)), spec_(std::move(spec)) {
    const auto widths = layer_widths();
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      params_.push_back(zeros(Shape{widths[l + 1], widths[l]}));
      params_.push_back(zeros(Shape{widths[l + 1]}));
    }
  }

  const std::string& name() const { return name_; }
  const MlpSpec& spec() const { return spec_; }
  int n_tensors() const { return static_cast<int>(params_.size()); }

  std::vector<int> layer_widths() const {
    std::vector<int> w{spec_.input};
    w.insert(w.end(), spec_.hidden.begin(), spec_.hidden.end());
    w.push_back(spec_.output);
    return w;
  }

  long param_count() const {
    long n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  // Symmetric uniform weights scaled by fan-in/fan-out, zero biases.
  void init(Rng& rng) {
    for (std::size_t l = 0; l < params_.size(); l += 2) {
      Tensor& w = params_[l];
      const double limit = std::sqrt(6.0 / (w.cols() + w.rows()));
      for (auto& v : w.mutable_values()) v = rng.uniform(-limit, limit);
      for (auto& v : params_[l + 1].mutable_values()) v = 0.0;
    }
  }

  void collect(ParamRefs& out) {
    for (std::size_t l = 0; l < params_.size(); l += 2) {
      const std::string idx = std::to_string(l / 2);
      out.push_back({name_ + "/w" + idx, &params_[l]});
      out.push_back({name_ + "/b" + idx, &params_[l + 1]});
    }
  }

  // Taped leaves when tape != nullptr, otherwise the constants themselves.
  std::vector<Tensor> attach(Tape* tape) const {
    std::vector<Tensor> h;
    h.reserve(params_.size());
    for (const auto& p : params_) h.push_back(tape ? tape->leaf(p) : p);
    return h;
  }

  // x is (input x B); rank-1 inputs are treated as a single column.
  Tensor forward(std::span<const Tensor> handles, const Tensor& x) const {
    const bool single = x.rank() < 2;
    Tensor h = single ? reshape(x, Shape{x.size(), 1}) : x;
    if (h.rows() != spec_.input)
      throw ShapeError("mlp_forward",
                       name_ + " expects " + std::to_string(spec_.input) + " inputs, got " +
                           shape_str(x.shape));
    const int batch = h.cols();
    for (std::size_t l = 0; l < handles.size(); l += 2) {
      const Tensor& w = handles[l];
      const Tensor& b = handles[l + 1];
      Tensor bias = matmul(reshape(b, Shape{b.size(), 1}), ones(Shape{1, batch}));
      h = add(matmul(w, h), bias);
      if (l + 2 < handles.size()) h = tanh(h);
    }
    return single ? reshape(h, Shape{spec_.output}) : h;
  }

 private:
  std::string name_;
  MlpSpec spec_;
  std::vector<Tensor> params_;
};

inline int tril_count(int dim) { return dim * (dim + 1) / 2; }
// Row-major position of lower-triangle entry (i, k), k <= i.
inline int tril_index(int i, int k) { return i * (i + 1) / 2 + k; }

// MLP emitting the n(n+1)/2 entries of a lower-triangular L; exposes
// L L^T (+ eps I), which is PSD for every input by construction.
class CholeskyNet {
 public:
  CholeskyNet() = default;
  CholeskyNet(std::string name, int input, std::vector<int> hidden, int dim, double epsilon,
              double diag_bias = 0.0)
      : inner_(std::move(name), MlpSpec{input, std::move(hidden), tril_count(dim)}),
        dim_(dim),
        epsilon_(epsilon),
        diag_bias_(diag_bias) {}

  const Mlp& inner() const { return inner_; }
  int dim() const { return dim_; }
  double epsilon() const { return epsilon_; }
  int n_tensors() const { return inner_.n_tensors(); }
  long param_count() const { return inner_.param_count(); }

  // L L^T gradients vanish as L -> 0, so the factor's diagonal starts at
  // diag_bias instead of the saddle at zero.
  void init(Rng& rng) {
    inner_.init(rng);
    if (diag_bias_ != 0.0) {
      ParamRefs refs;
      inner_.collect(refs);
      auto& last_bias = refs.back().value->mutable_values();
      for (int i = 0; i < dim_; ++i)
        last_bias[static_cast<std::size_t>(tril_index(i, i))] = diag_bias_;
    }
  }

  void collect(ParamRefs& out) { inner_.collect(out); }
  std::vector<Tensor> attach(Tape* tape) const { return inner_.attach(tape); }

  // (dim*dim x B) rows of the product matrix; row i*dim+j holds entry (i, j).
  Tensor forward_entries(std::span<const Tensor> handles, const Tensor& x) const {
    Tensor l = inner_.forward(handles, x.rank() < 2 ? reshape(x, Shape{x.size(), 1}) : x);
    const int batch = l.cols();
    std::vector<Tensor> entries(static_cast<std::size_t>(dim_) * dim_);
    for (int i = 0; i < dim_; ++i) {
      for (int j = 0; j <= i; ++j) {
        Tensor e = mul(row(l, tril_index(i, 0)), row(l, tril_index(j, 0)));
        for (int k = 1; k <= j; ++k)
          e = add(e, mul(row(l, tril_index(i, k)), row(l, tril_index(j, k))));
        if (i == j && epsilon_ != 0.0) e = add(e, full(Shape{1, batch}, epsilon_));
        entries[static_cast<std::size_t>(i) * dim_ + j] = e;
        if (i != j) entries[static_cast<std::size_t>(j) * dim_ + i] = e;
      }
    }
    return stack_rows(entries);
  }

  // Single-sample (dim x dim) matrix.
  Tensor forward_matrix(std::span<const Tensor> handles, const Tensor& x) const {
    Tensor e = forward_entries(handles, reshape(x, Shape{x.size(), 1}));
    return reshape(e, Shape{dim_, dim_});
  }

 private:
  Mlp inner_;
  int dim_ = 1;
  double epsilon_ = 0.0;
  double diag_bias_ = 0.0;
};

// ---- checkpoint serialization ------------------------------------------------
// JSON record: {"format_version": 1, "params": [{"name", "shape", "values"}]}.
// Doubles survive the round trip bit-exactly (shortest-round-trip printing).

inline void save_checkpoint(const std::string& path, const ParamRefs& params) {
  nlohmann::json j;
  j["format_version"] = 1;
  auto& arr = j["params"] = nlohmann::json::array();
  for (const auto& p : params) {
    nlohmann::json e;
    e["name"] = p.name;
    e["shape"] = p.value->shape;
    e["values"] = p.value->values();
    arr.push_back(std::move(e));
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << j.dump(1) << '\n';
}

inline void load_checkpoint(const std::string& path, const ParamRefs& params) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  if (!j.contains("format_version") || j["format_version"].get<int>() != 1)
    throw std::runtime_error("unsupported checkpoint format in " + path);
  const auto& arr = j.at("params");
  if (arr.size() != params.size())
    throw std::runtime_error("checkpoint parameter count mismatch in " + path);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = arr[i];
    if (e.at("name").get<std::string>() != params[i].name)
      throw std::runtime_error("checkpoint name mismatch: expected " + params[i].name);
    Shape shape = e.at("shape").get<Shape>();
    if (shape != params[i].value->shape)
      throw std::runtime_error("checkpoint shape mismatch for " + params[i].name);
    params[i].value->mutable_values() = e.at("values").get<std::vector<double>>();
  }
}

}  // namespace phlearn
