#pragma once

// Fixed-step classical RK4 over the augmented constant-input system
// [dx; du] = [f(x, u); 0]. One code path serves ground-truth simulation and
// differentiable training rollouts: gradients flow whenever the inputs are
// taped, because every stage is built from tape primitives.

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "phlearn/tensor.hpp"

namespace phlearn {

struct IntegrationError : std::runtime_error {
  int step;
  explicit IntegrationError(int step_index)
      : std::runtime_error("non-finite value produced at integration step " +
                           std::to_string(step_index)),
        step(step_index) {}
};

inline bool all_finite(const Tensor& t) {
  for (double v : t.values())
    if (!std::isfinite(v)) return false;
  return true;
}

// One classical Runge-Kutta update y + h/6 (k1 + 2 k2 + 2 k3 + k4).
// step_index only labels the IntegrationError raised on a non-finite stage.
template <typename Rhs>
Tensor rk4_step(Rhs&& rhs, const Tensor& y, double h, int step_index = 0) {
  if (!(h > 0.0)) throw std::invalid_argument("rk4_step: step size must be positive");
  const Tensor k1 = rhs(y);
  if (!all_finite(k1)) throw IntegrationError(step_index);
  const Tensor k2 = rhs(add(y, scalar_mul(k1, 0.5 * h)));
  if (!all_finite(k2)) throw IntegrationError(step_index);
  const Tensor k3 = rhs(add(y, scalar_mul(k2, 0.5 * h)));
  if (!all_finite(k3)) throw IntegrationError(step_index);
  const Tensor k4 = rhs(add(y, scalar_mul(k3, h)));
  if (!all_finite(k4)) throw IntegrationError(step_index);

  Tensor incr = add(add(k1, k4), scalar_mul(add(k2, k3), 2.0));
  return add(y, scalar_mul(incr, h / 6.0));
}

// State plus the constant control it was rolled out under.
struct AugmentedState {
  Tensor state;  // flat state, or (dim x batch)
  Tensor input;  // control, or (m x batch); held constant by the zero row
};

struct RolloutResult {
  std::vector<double> times;
  std::vector<Tensor> augmented;  // [x; u] at each output time, index 0 = initial
  int state_size = 0;             // rows (batched) or flat length of the state part

  Tensor state_at(int i) const {
    const Tensor& z = augmented[static_cast<std::size_t>(i)];
    if (z.rank() == 2) return rows(z, 0, state_size);
    return slice(z, 0, state_size);
  }
  Tensor input_at(int i) const {
    const Tensor& z = augmented[static_cast<std::size_t>(i)];
    if (z.rank() == 2) return rows(z, state_size, z.rows() - state_size);
    return slice(z, state_size, z.size() - state_size);
  }
};

// Iterated rk4_step on the augmented system. `substeps` RK4 steps of size
// h/substeps are taken per output gap; outputs land exactly on t0 + i*h.
template <typename Rhs>  // Rhs: Tensor(const Tensor& state, const Tensor& input)
RolloutResult odesolve(Rhs&& rhs, const AugmentedState& init, double h, int steps,
                       int substeps = 1, double t0 = 0.0) {
  if (steps < 1) throw std::invalid_argument("odesolve: steps must be >= 1");
  if (substeps < 1) throw std::invalid_argument("odesolve: substeps must be >= 1");

  const bool batched = init.state.rank() == 2;
  const int d = batched ? init.state.rows() : init.state.size();
  const int m = batched ? init.input.rows() : init.input.size();
  if (batched && init.input.cols() != init.state.cols())
    throw ShapeError("odesolve", "state " + shape_str(init.state.shape) + " vs input " +
                                     shape_str(init.input.shape));

  const Shape zshape = batched ? Shape{d + m, init.state.cols()} : Shape{d + m};
  const Shape ushape = init.input.shape;

  auto aug_rhs = [&](const Tensor& z) {
    Tensor x = batched ? rows(z, 0, d) : slice(z, 0, d, init.state.shape);
    Tensor u = batched ? rows(z, d, m) : slice(z, d * 1, m, ushape);
    Tensor dx = rhs(x, u);
    return concat(dx, zeros(ushape), zshape);
  };

  RolloutResult out;
  out.state_size = d;
  out.times.reserve(static_cast<std::size_t>(steps) + 1);
  out.augmented.reserve(static_cast<std::size_t>(steps) + 1);

  Tensor z = concat(init.state, init.input, zshape);
  out.times.push_back(t0);
  out.augmented.push_back(z);

  const double hs = h / substeps;
  for (int i = 1; i <= steps; ++i) {
    for (int s = 0; s < substeps; ++s) z = rk4_step(aug_rhs, z, hs, i);
    if (!all_finite(z)) throw IntegrationError(i);
    out.times.push_back(t0 + i * h);
    out.augmented.push_back(z);
  }
  return out;
}

}  // namespace phlearn
