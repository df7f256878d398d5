#pragma once

// The dynamics-model zoo. Every variant exposes one uniform RHS
//   f(state, u) -> d(state)/dt
// over three state layouts:
//   phase     [q(n); p(n)]
//   embedded  [x1(m); x2(m); x3(m)]            x1 = cos q, x2 = sin q, x3 = qdot
//   hybrid    [x1(n); x2(m); x3(m); x4(n); x5(m)]  r, cos phi, sin phi, rdot, phidot
//
// Structured variants build H = 1/2 p^T Minv(q) p + V(q) from four
// approximator slots and wire the port-Hamiltonian skeleton
//   [qdot; pdot] = ([[0, I], [-I, 0]] - D(q)) grad H + [0; g(q)] u
// into the tape. In embedded/hybrid layouts the momentum is reconstructed by
// solving Minv p = qdot on the tape, and the canonical partials of H are
// assembled from Jacobians of the slot outputs so that the reconstruction
// does not alias into dH/dq.

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "phlearn/autodiff.hpp"
#include "phlearn/nets.hpp"
#include "phlearn/tensor.hpp"

namespace phlearn {

enum class Variant {
  DissipativeSymoden,
  Symoden,
  UnstructuredDissipative,
  NaiveBaseline,
  GeometricBaseline,
};

enum class Representation { Phase, Embedded, Hybrid };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::DissipativeSymoden: return "dissipative-symoden";
    case Variant::Symoden: return "symoden";
    case Variant::UnstructuredDissipative: return "unstructured-dissipative";
    case Variant::NaiveBaseline: return "naive-baseline";
    case Variant::GeometricBaseline: return "geometric-baseline";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::DissipativeSymoden, Variant::Symoden,
                    Variant::UnstructuredDissipative, Variant::NaiveBaseline,
                    Variant::GeometricBaseline})
    if (s == variant_name(v)) return v;
  throw std::invalid_argument("unknown model variant: " + s);
}

inline const char* representation_name(Representation r) {
  switch (r) {
    case Representation::Phase: return "phase";
    case Representation::Embedded: return "embedded";
    case Representation::Hybrid: return "hybrid";
  }
  return "?";
}

inline Representation parse_representation(const std::string& s) {
  for (Representation r :
       {Representation::Phase, Representation::Embedded, Representation::Hybrid})
    if (s == representation_name(r)) return r;
  throw std::invalid_argument("unknown representation: " + s);
}

struct ModelSpec {
  Variant variant = Variant::DissipativeSymoden;
  Representation rep = Representation::Phase;
  int trans_dof = 1;  // n
  int angle_dof = 0;  // m
  int inputs = 1;     // control dimension

  std::vector<int> hidden = {64, 64};  // structured approximators
  std::vector<int> naive_hidden = {256, 256};
  std::vector<int> geometric_hidden = {128, 128};
  std::vector<int> unstructured_hidden = {128, 128};
  double mass_eps = 0.01;

  int dof() const { return trans_dof + angle_dof; }
  int state_size() const { return 2 * trans_dof + 3 * angle_dof; }
  // width of the coordinate vector the q-dependent approximators consume
  int coord_size() const { return trans_dof + 2 * angle_dof; }

  void validate() const {
    if (rep == Representation::Phase && angle_dof != 0)
      throw std::invalid_argument("phase representation carries no embedded angles");
    if (rep == Representation::Embedded && trans_dof != 0)
      throw std::invalid_argument("embedded representation carries no translations");
    if (dof() < 1 || inputs < 1) throw std::invalid_argument("model needs dof >= 1, inputs >= 1");
    if (variant == Variant::GeometricBaseline && rep == Representation::Phase)
      throw std::invalid_argument("geometric baseline requires embedded or hybrid representation");
  }
};

// ---- approximator slots ------------------------------------------------------

// One function-approximator slot of the model. Slots own their parameters;
// eval() consumes the per-tape handles produced by attach() so the identical
// code path serves training (taped) and plain evaluation.
class Slot {
 public:
  virtual ~Slot() = default;
  virtual long param_count() const = 0;
  virtual void init(Rng& rng) = 0;
  virtual void collect(ParamRefs& out) = 0;
  virtual std::vector<Tensor> attach(Tape* tape) const = 0;
  // x: (coord_size x B) -> role-dependent rows over the batch
  virtual Tensor eval(std::span<const Tensor> handles, const Tensor& x) const = 0;
};

class MlpSlot final : public Slot {
 public:
  MlpSlot(std::string name, MlpSpec spec) : net_(std::move(name), std::move(spec)) {}
  long param_count() const override { return net_.param_count(); }
  void init(Rng& rng) override { net_.init(rng); }
  void collect(ParamRefs& out) override { net_.collect(out); }
  std::vector<Tensor> attach(Tape* tape) const override { return net_.attach(tape); }
  Tensor eval(std::span<const Tensor> h, const Tensor& x) const override {
    return net_.forward(h, x);
  }
  const Mlp& net() const { return net_; }

 private:
  Mlp net_;
};

class CholeskySlot final : public Slot {
 public:
  CholeskySlot(std::string name, int input, std::vector<int> hidden, int dim, double epsilon,
               double diag_bias = 0.0)
      : net_(std::move(name), input, std::move(hidden), dim, epsilon, diag_bias) {}
  long param_count() const override { return net_.param_count(); }
  void init(Rng& rng) override { net_.init(rng); }
  void collect(ParamRefs& out) override { net_.collect(out); }
  std::vector<Tensor> attach(Tape* tape) const override { return net_.attach(tape); }
  Tensor eval(std::span<const Tensor> h, const Tensor& x) const override {
    return net_.forward_entries(h, x);
  }
  const CholeskyNet& net() const { return net_; }

 private:
  CholeskyNet net_;
};

// Constant (coordinate-independent) matrix-valued function with the matrix
// entries as its trainable parameter. Used for ground-truth instantiations.
class ConstantFunctionSlot final : public Slot {
 public:
  ConstantFunctionSlot(std::string name, Tensor value)
      : name_(std::move(name)), value_(std::move(value)) {}
  long param_count() const override { return value_.size(); }
  void init(Rng&) override {}
  void collect(ParamRefs& out) override { out.push_back({name_, &value_}); }
  std::vector<Tensor> attach(Tape* tape) const override {
    return {tape ? tape->leaf(value_) : value_};
  }
  Tensor eval(std::span<const Tensor> h, const Tensor& x) const override {
    const int batch = x.cols();
    return matmul(reshape(h[0], Shape{h[0].size(), 1}), ones(Shape{1, batch}));
  }

 private:
  std::string name_;
  Tensor value_;
};

// V = a * sum_i (1 - cos q_i), expressed in whichever encoding the
// representation provides (phase: q directly; embedded/hybrid: cos q rows).
class CosinePotentialSlot final : public Slot {
 public:
  CosinePotentialSlot(std::string name, double amplitude, Representation rep, int trans_dof,
                      int angle_dof)
      : name_(std::move(name)),
        amplitude_(scalar(amplitude)),
        rep_(rep),
        n_(trans_dof),
        m_(angle_dof) {}
  long param_count() const override { return 1; }
  void init(Rng&) override {}
  void collect(ParamRefs& out) override { out.push_back({name_, &amplitude_}); }
  std::vector<Tensor> attach(Tape* tape) const override {
    return {tape ? tape->leaf(amplitude_) : amplitude_};
  }
  Tensor eval(std::span<const Tensor> h, const Tensor& x) const override {
    const int batch = x.cols();
    Tensor cosq = rep_ == Representation::Phase
                      ? cos(x)                 // x = q rows
                      : rows(x, n_, m_);       // cos-angle rows of the embedding
    Tensor terms = sub(ones(cosq.shape), cosq);
    Tensor total = matmul(ones(Shape{1, cosq.rows()}), terms);  // {1, B}
    return mul(matmul(reshape(h[0], Shape{1, 1}), ones(Shape{1, batch})), total);
  }

 private:
  std::string name_;
  Tensor amplitude_;
  Representation rep_;
  int n_, m_;
};

// ---- batched small-matrix row algebra ---------------------------------------

namespace rowalg {

// entries (r*c x B), v (c x B) -> (r x B): out_i = sum_j E[i,j] v_j
inline Tensor matvec(const Tensor& entries, int r, int c, const Tensor& v) {
  if (r == 0) return zeros(Shape{0, v.cols()});
  std::vector<Tensor> out(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    Tensor acc = mul(row(entries, i * c), row(v, 0));
    for (int j = 1; j < c; ++j) acc = add(acc, mul(row(entries, i * c + j), row(v, j)));
    out[static_cast<std::size_t>(i)] = acc;
  }
  return stack_rows(out);
}

// sum_ij a_i E[i,j] b_j -> (1 x B)
inline Tensor quad_form(const Tensor& entries, int d, const Tensor& a, const Tensor& b) {
  Tensor acc = zeros(Shape{1, a.cols()});
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      acc = add(acc, mul(mul(row(a, i), row(entries, i * d + j)), row(b, j)));
  return acc;
}

// Solve E x = rhs per batch column for d = 1 or 2 (closed form; the tasks
// never exceed two degrees of freedom).
inline Tensor solve(const Tensor& entries, int d, const Tensor& rhs) {
  if (d == 1) return mul(reciprocal(row(entries, 0)), rhs);
  if (d == 2) {
    Tensor a = row(entries, 0), b = row(entries, 1);
    Tensor c = row(entries, 2), e = row(entries, 3);
    Tensor inv_det = reciprocal(sub(mul(a, e), mul(b, c)));
    Tensor r0 = row(rhs, 0), r1 = row(rhs, 1);
    Tensor x0 = mul(inv_det, sub(mul(e, r0), mul(b, r1)));
    Tensor x1 = mul(inv_det, sub(mul(a, r1), mul(c, r0)));
    return stack_rows({x0, x1});
  }
  throw std::invalid_argument("on-tape solve implemented for 1 or 2 DOF");
}

}  // namespace rowalg

// H = 1/2 p^T Minv p + V for a single state (spec-level building block).
inline Tensor hamiltonian(const Tensor& m_inv, const Tensor& v_val, const Tensor& p) {
  if (m_inv.rows() != m_inv.cols() || m_inv.rows() != p.size())
    throw ShapeError("hamiltonian", shape_str(m_inv.shape) + " vs p " + shape_str(p.shape));
  Tensor kinetic = scalar_mul(dot(p, matmul(m_inv, p)), 0.5);
  return add(kinetic, reshape(v_val, Shape{}));
}

// ---- the model ---------------------------------------------------------------

class Model;

// Per-tape view of a model: parameter handles bound to one tape (or to the
// constants themselves when tape == nullptr).
class AttachedModel {
 public:
  AttachedModel(const Model& model, Tape* tape);

  // state (state_size x B) and u (inputs x B); rank-1 arguments are treated
  // as a single column and returned as rank-1.
  Tensor rhs(const Tensor& state, const Tensor& u) const;

  // Slot evaluations over coordinate columns, for reports and plots.
  Tensor mass_inv_entries(const Tensor& coords) const;
  Tensor potential_row(const Tensor& coords) const;
  Tensor input_gain_entries(const Tensor& coords) const;
  Tensor dissipation_entries(const Tensor& coords) const;
  Tensor hamiltonian_row(const Tensor& state) const;  // unstructured variant

 private:
  Tensor rhs_matrix(const Tensor& z, const Tensor& u) const;
  Tensor structured_phase(const Tensor& z, const Tensor& u) const;
  Tensor structured_embedded(const Tensor& z, const Tensor& u) const;
  Tensor structured_hybrid(const Tensor& z, const Tensor& u) const;
  Tensor unstructured(const Tensor& z, const Tensor& u) const;
  Tensor naive(const Tensor& z, const Tensor& u) const;
  Tensor geometric(const Tensor& z, const Tensor& u) const;

  // dissipation contribution rows: (D gradH)_i for i in [0, 2*dof)
  Tensor damping(const Tensor& coords, const Tensor& grad_full) const;
  Tensor control_term(const Tensor& coords, const Tensor& u) const;

  const Model* model_;
  Tape* tape_ = nullptr;
  std::vector<Tensor> h_mass_, h_pot_, h_gain_, h_diss_, h_ham_, h_f_, h_qdot_, h_accel_;
};

class Model {
 public:
  explicit Model(ModelSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    const int ci = spec_.coord_size();
    const int d = spec_.dof();
    const int k = spec_.inputs;
    switch (spec_.variant) {
      case Variant::DissipativeSymoden:
        mass_inv_ = std::make_unique<CholeskySlot>("m_inv", ci, spec_.hidden, d, spec_.mass_eps,
                                                   1.0);
        potential_ = std::make_unique<MlpSlot>("v", MlpSpec{ci, spec_.hidden, 1});
        input_gain_ = std::make_unique<MlpSlot>("g", MlpSpec{ci, spec_.hidden, d * k});
        dissipation_ = std::make_unique<CholeskySlot>("d", ci, spec_.hidden, 2 * d, 0.0);
        break;
      case Variant::Symoden:
        mass_inv_ = std::make_unique<CholeskySlot>("m_inv", ci, spec_.hidden, d, spec_.mass_eps,
                                                   1.0);
        potential_ = std::make_unique<MlpSlot>("v", MlpSpec{ci, spec_.hidden, 1});
        input_gain_ = std::make_unique<MlpSlot>("g", MlpSpec{ci, spec_.hidden, d * k});
        break;
      case Variant::UnstructuredDissipative:
        ham_ = std::make_unique<MlpSlot>(
            "h", MlpSpec{spec_.state_size(), spec_.unstructured_hidden, 1});
        input_gain_ = std::make_unique<MlpSlot>("g", MlpSpec{ci, spec_.hidden, d * k});
        dissipation_ = std::make_unique<CholeskySlot>("d", ci, spec_.hidden, 2 * d, 0.0);
        break;
      case Variant::NaiveBaseline:
        f_ = std::make_unique<MlpSlot>(
            "f", MlpSpec{spec_.state_size() + k, spec_.naive_hidden, spec_.state_size()});
        break;
      case Variant::GeometricBaseline:
        qdot_ = std::make_unique<MlpSlot>(
            "qdot", MlpSpec{spec_.state_size() + k, spec_.geometric_hidden, d});
        accel_ = std::make_unique<MlpSlot>(
            "accel", MlpSpec{spec_.state_size() + k, spec_.geometric_hidden, d});
        break;
    }
  }

  // Assemble a structured model from explicit slots (truth instantiations,
  // reduction tests). A null dissipation slot yields conservative dynamics.
  static Model with_slots(ModelSpec spec, std::unique_ptr<Slot> mass_inv,
                          std::unique_ptr<Slot> potential, std::unique_ptr<Slot> input_gain,
                          std::unique_ptr<Slot> dissipation) {
    Model m(std::move(spec));
    m.mass_inv_ = std::move(mass_inv);
    m.potential_ = std::move(potential);
    m.input_gain_ = std::move(input_gain);
    m.dissipation_ = std::move(dissipation);
    return m;
  }

  // Structured model whose slots are the exact ground-truth functions of the
  // pendulum system (inverse mass 3, potential 5(1 - cos q), unit input gain,
  // dissipation diag(0, 0.1)), with those constants as trainable parameters.
  static Model pendulum_truth(Representation rep) {
    if (rep == Representation::Hybrid)
      throw std::invalid_argument("pendulum truth model is phase or embedded");
    ModelSpec spec;
    spec.variant = Variant::DissipativeSymoden;
    spec.rep = rep;
    spec.trans_dof = rep == Representation::Phase ? 1 : 0;
    spec.angle_dof = rep == Representation::Embedded ? 1 : 0;
    spec.inputs = 1;
    const Representation r = spec.rep;
    const int n = spec.trans_dof, m_dof = spec.angle_dof;
    return with_slots(
        std::move(spec), std::make_unique<ConstantFunctionSlot>("m_inv", mat(1, 1, {3.0})),
        std::make_unique<CosinePotentialSlot>("v", 5.0, r, n, m_dof),
        std::make_unique<ConstantFunctionSlot>("g", mat(1, 1, {1.0})),
        std::make_unique<ConstantFunctionSlot>("d", mat(2, 2, {0.0, 0.0, 0.0, 0.1})));
  }

  const ModelSpec& spec() const { return spec_; }

  void init(Rng& rng) {
    for (Slot* s : slots())
      if (s) s->init(rng);
  }

  ParamRefs params() {
    ParamRefs out;
    for (Slot* s : slots())
      if (s) s->collect(out);
    return out;
  }

  long param_count() const {
    long n = 0;
    for (const Slot* s : slots())
      if (s) n += s->param_count();
    return n;
  }

  AttachedModel attach(Tape* tape) const { return AttachedModel(*this, tape); }

  const Slot* mass_inv() const { return mass_inv_.get(); }
  const Slot* potential() const { return potential_.get(); }
  const Slot* input_gain() const { return input_gain_.get(); }
  const Slot* dissipation() const { return dissipation_.get(); }
  const Slot* ham() const { return ham_.get(); }
  const Slot* f() const { return f_.get(); }
  const Slot* qdot_net() const { return qdot_.get(); }
  const Slot* accel_net() const { return accel_.get(); }

 private:
  friend class AttachedModel;
  std::vector<Slot*> slots() const {
    return {mass_inv_.get(), potential_.get(), input_gain_.get(), dissipation_.get(),
            ham_.get(),      f_.get(),         qdot_.get(),       accel_.get()};
  }

  ModelSpec spec_;
  std::unique_ptr<Slot> mass_inv_, potential_, input_gain_, dissipation_;
  std::unique_ptr<Slot> ham_, f_, qdot_, accel_;
};

// ---- AttachedModel implementation --------------------------------------------

inline AttachedModel::AttachedModel(const Model& model, Tape* tape)
    : model_(&model), tape_(tape) {
  auto grab = [&](const std::unique_ptr<Slot>& s) {
    return s ? s->attach(tape) : std::vector<Tensor>{};
  };
  h_mass_ = grab(model.mass_inv_);
  h_pot_ = grab(model.potential_);
  h_gain_ = grab(model.input_gain_);
  h_diss_ = grab(model.dissipation_);
  h_ham_ = grab(model.ham_);
  h_f_ = grab(model.f_);
  h_qdot_ = grab(model.qdot_);
  h_accel_ = grab(model.accel_);
}

inline Tensor AttachedModel::mass_inv_entries(const Tensor& coords) const {
  if (!model_->mass_inv_) throw std::logic_error("model has no mass-inverse slot");
  return model_->mass_inv_->eval(h_mass_, coords);
}
inline Tensor AttachedModel::potential_row(const Tensor& coords) const {
  if (!model_->potential_) throw std::logic_error("model has no potential slot");
  return model_->potential_->eval(h_pot_, coords);
}
inline Tensor AttachedModel::input_gain_entries(const Tensor& coords) const {
  if (!model_->input_gain_) throw std::logic_error("model has no input-gain slot");
  return model_->input_gain_->eval(h_gain_, coords);
}
inline Tensor AttachedModel::dissipation_entries(const Tensor& coords) const {
  if (!model_->dissipation_) throw std::logic_error("model has no dissipation slot");
  return model_->dissipation_->eval(h_diss_, coords);
}
inline Tensor AttachedModel::hamiltonian_row(const Tensor& state) const {
  if (!model_->ham_) throw std::logic_error("model has no monolithic Hamiltonian slot");
  return model_->ham_->eval(h_ham_, state);
}

inline Tensor AttachedModel::damping(const Tensor& coords, const Tensor& grad_full) const {
  const int d2 = 2 * model_->spec_.dof();
  Tensor entries = model_->dissipation_->eval(h_diss_, coords);
  return rowalg::matvec(entries, d2, d2, grad_full);
}

inline Tensor AttachedModel::control_term(const Tensor& coords, const Tensor& u) const {
  const ModelSpec& s = model_->spec_;
  Tensor entries = model_->input_gain_->eval(h_gain_, coords);
  return rowalg::matvec(entries, s.dof(), s.inputs, u);
}

inline Tensor AttachedModel::rhs(const Tensor& state, const Tensor& u) const {
  // Several variants take gradients of internal scalars, which needs a tape;
  // in plain-value mode run on a scratch tape and detach the result.
  if (!tape_) {
    Tape scratch;
    AttachedModel taped(*model_, &scratch);
    Tensor d = taped.rhs(scratch.leaf(state), scratch.leaf(u));
    return Tensor(d.shape, d.values());
  }
  const ModelSpec& s = model_->spec_;
  if (state.rank() == 2) {
    if (state.rows() != s.state_size() || u.rows() != s.inputs || state.cols() != u.cols())
      throw ShapeError("model-rhs", "state " + shape_str(state.shape) + ", input " +
                                        shape_str(u.shape));
    return rhs_matrix(state, u);
  }
  if (state.size() != s.state_size() || u.size() != s.inputs)
    throw ShapeError("model-rhs",
                     "state " + shape_str(state.shape) + ", input " + shape_str(u.shape));
  Tensor z = reshape(state, Shape{s.state_size(), 1});
  Tensor uc = reshape(u, Shape{s.inputs, 1});
  return reshape(rhs_matrix(z, uc), Shape{s.state_size()});
}

inline Tensor AttachedModel::rhs_matrix(const Tensor& z, const Tensor& u) const {
  switch (model_->spec_.variant) {
    case Variant::DissipativeSymoden:
    case Variant::Symoden:
      switch (model_->spec_.rep) {
        case Representation::Phase: return structured_phase(z, u);
        case Representation::Embedded: return structured_embedded(z, u);
        case Representation::Hybrid: return structured_hybrid(z, u);
      }
      break;
    case Variant::UnstructuredDissipative: return unstructured(z, u);
    case Variant::NaiveBaseline: return naive(z, u);
    case Variant::GeometricBaseline: return geometric(z, u);
  }
  throw std::logic_error("unreachable model dispatch");
}

inline Tensor AttachedModel::structured_phase(const Tensor& z, const Tensor& u) const {
  const ModelSpec& s = model_->spec_;
  const int n = s.trans_dof;
  Tensor q = rows(z, 0, n);
  Tensor p = rows(z, n, n);

  Tensor m_ent = model_->mass_inv_->eval(h_mass_, q);
  Tensor kinetic = scalar_mul(rowalg::quad_form(m_ent, n, p, p), 0.5);
  Tensor h_row = add(kinetic, model_->potential_->eval(h_pot_, q));

  auto grads = grad_wrt(sum(h_row), {q, p});
  const Tensor& dhdq = grads[0];
  const Tensor& dhdp = grads[1];

  Tensor qdot = dhdp;
  Tensor pdot = neg(dhdq);
  if (model_->dissipation_) {
    Tensor damp = damping(q, stack_rows({dhdq, dhdp}));
    qdot = sub(qdot, rows(damp, 0, n));
    pdot = sub(pdot, rows(damp, n, n));
  }
  pdot = add(pdot, control_term(q, u));
  return stack_rows({qdot, pdot});
}

namespace detail {
// Per-entry Jacobian rows of a symmetric matrix-valued slot output with
// respect to each coordinate block. jac[t][e] holds d(entry_e)/d(block_t) as
// (block_rows x B); symmetric entries share the same Jacobian object.
struct EntryJacobians {
  std::vector<std::vector<Tensor>> jac;  // [block][i*d + j]
};

inline EntryJacobians entry_jacobians(const Tensor& entries, int d,
                                      const std::vector<Tensor>& blocks) {
  EntryJacobians out;
  out.jac.assign(blocks.size(), std::vector<Tensor>(static_cast<std::size_t>(d) * d));
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) {
      auto g = grad_wrt(sum(row(entries, i * d + j)), blocks);
      for (std::size_t t = 0; t < blocks.size(); ++t) {
        out.jac[t][static_cast<std::size_t>(i) * d + j] = g[t];
        out.jac[t][static_cast<std::size_t>(j) * d + i] = g[t];
      }
    }
  return out;
}

// 1/2 sum_ij p_i p_j dM_ij/dx rows accumulated over entries for one block.
inline Tensor kinetic_coord_grad(const EntryJacobians& jb, std::size_t block, int d,
                                 const Tensor& p, int block_rows, int batch) {
  Tensor acc = zeros(Shape{block_rows, batch});
  if (block_rows == 0) return acc;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      Tensor w = mul(row(p, i), row(p, j));  // {1, B}
      Tensor wj = mul(matmul(ones(Shape{block_rows, 1}), w), jb.jac[block][i * d + j]);
      acc = add(acc, scalar_mul(wj, 0.5));
    }
  return acc;
}

// sum_ij (dM_ij/dt) entry rows given block velocities.
inline std::vector<Tensor> entry_time_derivatives(const EntryJacobians& jb, int d,
                                                  const std::vector<Tensor>& block_vel,
                                                  int batch) {
  std::vector<Tensor> out(static_cast<std::size_t>(d) * d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      Tensor acc = zeros(Shape{1, batch});
      for (std::size_t t = 0; t < block_vel.size(); ++t) {
        const Tensor& vel = block_vel[t];
        if (vel.rows() == 0) continue;
        // sum_k J[k] * vel_k
        Tensor prod = mul(jb.jac[t][static_cast<std::size_t>(i) * d + j], vel);
        acc = add(acc, matmul(ones(Shape{1, vel.rows()}), prod));
      }
      out[static_cast<std::size_t>(i) * d + j] = acc;
    }
  return out;
}
}  // namespace detail

inline Tensor AttachedModel::structured_embedded(const Tensor& z, const Tensor& u) const {
  const ModelSpec& s = model_->spec_;
  const int m = s.angle_dof;
  const int batch = z.cols();
  Tensor x1 = rows(z, 0, m);
  Tensor x2 = rows(z, m, m);
  Tensor x3 = rows(z, 2 * m, m);
  Tensor coords = stack_rows({x1, x2});

  Tensor m_ent = model_->mass_inv_->eval(h_mass_, coords);
  Tensor p = rowalg::solve(m_ent, m, x3);       // Minv p = qdot
  Tensor qdot = rowalg::matvec(m_ent, m, m, p); // equals x3 in value, taped through theta

  Tensor dx1 = neg(mul(x2, qdot));
  Tensor dx2 = mul(x1, qdot);

  Tensor v_row = model_->potential_->eval(h_pot_, coords);
  auto dv = grad_wrt(sum(v_row), {x1, x2});

  auto jb = detail::entry_jacobians(m_ent, m, {x1, x2});
  Tensor dhdx1 = add(dv[0], detail::kinetic_coord_grad(jb, 0, m, p, m, batch));
  Tensor dhdx2 = add(dv[1], detail::kinetic_coord_grad(jb, 1, m, p, m, batch));

  // chain rule through (cos q, sin q)
  Tensor dhdq = add(neg(mul(x2, dhdx1)), mul(x1, dhdx2));
  const Tensor& dhdp = qdot;

  Tensor pdot = neg(dhdq);
  if (model_->dissipation_) {
    Tensor damp = damping(coords, stack_rows({dhdq, dhdp}));
    pdot = sub(pdot, rows(damp, m, m));
  }
  pdot = add(pdot, control_term(coords, u));

  auto dm_dt = detail::entry_time_derivatives(jb, m, {dx1, dx2}, batch);
  Tensor dx3 = add(rowalg::matvec(stack_rows(dm_dt), m, m, p), rowalg::matvec(m_ent, m, m, pdot));
  return stack_rows({dx1, dx2, dx3});
}

inline Tensor AttachedModel::structured_hybrid(const Tensor& z, const Tensor& u) const {
  const ModelSpec& s = model_->spec_;
  const int n = s.trans_dof;
  const int m = s.angle_dof;
  const int d = n + m;
  const int batch = z.cols();
  Tensor x1 = rows(z, 0, n);
  Tensor x2 = rows(z, n, m);
  Tensor x3 = rows(z, n + m, m);
  Tensor x4 = rows(z, n + 2 * m, n);
  Tensor x5 = rows(z, 2 * n + 2 * m, m);
  Tensor coords = stack_rows({x1, x2, x3});
  Tensor qdot_obs = stack_rows({x4, x5});

  Tensor m_ent = model_->mass_inv_->eval(h_mass_, coords);
  Tensor p = rowalg::solve(m_ent, d, qdot_obs);
  Tensor qdot = rowalg::matvec(m_ent, d, d, p);
  Tensor qdot_r = rows(qdot, 0, n);
  Tensor qdot_phi = rows(qdot, n, m);

  Tensor dx1 = qdot_r;
  Tensor dx2 = neg(mul(x3, qdot_phi));
  Tensor dx3 = mul(x2, qdot_phi);

  Tensor v_row = model_->potential_->eval(h_pot_, coords);
  auto dv = grad_wrt(sum(v_row), {x1, x2, x3});

  auto jb = detail::entry_jacobians(m_ent, d, {x1, x2, x3});
  Tensor dhdx1 = add(dv[0], detail::kinetic_coord_grad(jb, 0, d, p, n, batch));
  Tensor dhdx2 = add(dv[1], detail::kinetic_coord_grad(jb, 1, d, p, m, batch));
  Tensor dhdx3 = add(dv[2], detail::kinetic_coord_grad(jb, 2, d, p, m, batch));

  Tensor dhdq_r = dhdx1;
  Tensor dhdq_phi = add(neg(mul(x3, dhdx2)), mul(x2, dhdx3));
  Tensor dhdq = stack_rows({dhdq_r, dhdq_phi});
  const Tensor& dhdp = qdot;

  Tensor pdot = neg(dhdq);
  if (model_->dissipation_) {
    Tensor damp = damping(coords, stack_rows({dhdq, dhdp}));
    pdot = sub(pdot, rows(damp, d, d));
  }
  pdot = add(pdot, control_term(coords, u));

  auto dm_dt = detail::entry_time_derivatives(jb, d, {dx1, dx2, dx3}, batch);
  Tensor accel = add(rowalg::matvec(stack_rows(dm_dt), d, d, p), rowalg::matvec(m_ent, d, d, pdot));
  return stack_rows({dx1, dx2, dx3, rows(accel, 0, n), rows(accel, n, m)});
}

inline Tensor AttachedModel::unstructured(const Tensor& z, const Tensor& u) const {
  const ModelSpec& s = model_->spec_;
  const int n = s.trans_dof;
  const int m = s.angle_dof;
  const int d = n + m;
  Tensor h_row = model_->ham_->eval(h_ham_, z);
  Tensor S = sum(h_row);

  if (s.rep == Representation::Phase) {
    Tensor q = rows(z, 0, n);
    Tensor p = rows(z, n, n);
    auto grads = grad_wrt(S, {q, p});
    Tensor qdot = grads[1];
    Tensor pdot = neg(grads[0]);
    if (model_->dissipation_) {
      Tensor damp = damping(q, stack_rows({grads[0], grads[1]}));
      qdot = sub(qdot, rows(damp, 0, n));
      pdot = sub(pdot, rows(damp, n, n));
    }
    pdot = add(pdot, control_term(q, u));
    return stack_rows({qdot, pdot});
  }

  // Embedded/hybrid: the velocity rows stand in for the momenta.
  Tensor x1 = rows(z, 0, n);
  Tensor x2 = rows(z, n, m);
  Tensor x3 = rows(z, n + m, m);
  Tensor x4 = rows(z, n + 2 * m, n);
  Tensor x5 = rows(z, 2 * n + 2 * m, m);
  Tensor coords = stack_rows({x1, x2, x3});
  auto grads = grad_wrt(S, {x1, x2, x3, x4, x5});

  Tensor dhdq = stack_rows({grads[0], add(neg(mul(x3, grads[1])), mul(x2, grads[2]))});
  Tensor dhdp = stack_rows({grads[3], grads[4]});

  Tensor qdot_r = rows(dhdp, 0, n);
  Tensor qdot_phi = rows(dhdp, n, m);
  Tensor pdot = neg(dhdq);
  if (model_->dissipation_) {
    Tensor damp = damping(coords, stack_rows({dhdq, dhdp}));
    pdot = sub(pdot, rows(damp, d, d));
  }
  pdot = add(pdot, control_term(coords, u));

  return stack_rows({qdot_r, neg(mul(x3, qdot_phi)), mul(x2, qdot_phi), rows(pdot, 0, n),
                     rows(pdot, n, m)});
}

inline Tensor AttachedModel::naive(const Tensor& z, const Tensor& u) const {
  return model_->f_->eval(h_f_, stack_rows({z, u}));
}

inline Tensor AttachedModel::geometric(const Tensor& z, const Tensor& u) const {
  const ModelSpec& s = model_->spec_;
  const int n = s.trans_dof;
  const int m = s.angle_dof;
  Tensor x2 = rows(z, n, m);
  Tensor x3 = rows(z, n + m, m);
  Tensor in = stack_rows({z, u});
  Tensor qd = model_->qdot_->eval(h_qdot_, in);
  Tensor accel = model_->accel_->eval(h_accel_, in);
  Tensor qdot_phi = rows(qd, n, m);
  return stack_rows({rows(qd, 0, n), neg(mul(x3, qdot_phi)), mul(x2, qdot_phi),
                     rows(accel, 0, n), rows(accel, n, m)});
}

}  // namespace phlearn
