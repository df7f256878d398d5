#pragma once

// Training and evaluation harness: tau-horizon windowed L2 loss through the
// unrolled RK4 solver, Adam updates, and the three per-trajectory metrics
// (train / test / 40-step zero-input prediction error).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "phlearn/autodiff.hpp"
#include "phlearn/models.hpp"
#include "phlearn/odeint.hpp"
#include "phlearn/simlab.hpp"

namespace phlearn {

struct TrainConfig {
  int tau = 3;
  int epochs = 1000;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_opt = 1e-8;
  int batch_size = 0;  // 0 = full batch
  int substeps = 1;    // RK4 substeps per observation gap
  int threads = 2;     // windows split across independent tapes, ordered reduction
  std::uint64_t seed = 0;

  void validate(int trajectory_len) const {
    if (tau < 1 || tau >= trajectory_len)
      throw std::invalid_argument("tau must satisfy 1 <= tau < trajectory length");
    if (epochs < 1) throw std::invalid_argument("epochs must be positive");
  }
};

struct MetricsReport {
  double train_mean = 0.0, train_std = 0.0;
  double test_mean = 0.0, test_std = 0.0;
  double pred_mean = 0.0, pred_std = 0.0;
  long param_count = 0;
  double wall_seconds = 0.0;
  // recorded so Table-1-style numbers are comparable across tasks
  std::string normalization = "mean-over-windows-steps-components";
};

struct EpochRecord {
  int epoch;
  double train_loss;
  double test_loss;
};

struct TrainResult {
  MetricsReport metrics;
  std::vector<EpochRecord> history;
  double final_lr = 0.0;
  int nan_rollbacks = 0;
};

// ---- Adam ----------------------------------------------------------------------

struct AdamState {
  std::vector<std::vector<double>> m1, m2;  // aligned with the parameter list
  long step = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

inline AdamState adam_init(const ParamRefs& params, double beta1, double beta2, double eps) {
  AdamState s;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.eps = eps;
  for (const auto& p : params) {
    s.m1.emplace_back(p.value->values().size(), 0.0);
    s.m2.emplace_back(p.value->values().size(), 0.0);
  }
  return s;
}

// Standard bias-corrected update; gradients aligned with params.
inline void adam_step(AdamState& s, const ParamRefs& params,
                      const std::vector<std::vector<double>>& grads, double lr) {
  ++s.step;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& theta = params[i].value->mutable_values();
    auto& m1 = s.m1[i];
    auto& m2 = s.m2[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      m1[j] = s.beta1 * m1[j] + (1.0 - s.beta1) * g[j];
      m2[j] = s.beta2 * m2[j] + (1.0 - s.beta2) * g[j] * g[j];
      const double mhat = m1[j] / bc1;
      const double vhat = m2[j] / bc2;
      theta[j] -= lr * mhat / (std::sqrt(vhat) + s.eps);
    }
  }
}

// ---- windows ---------------------------------------------------------------------

struct WindowRef {
  int trajectory;
  int start;
};

inline std::vector<WindowRef> all_windows(const Dataset& ds, int tau) {
  std::vector<WindowRef> out;
  for (int t = 0; t < static_cast<int>(ds.trajectories.size()); ++t) {
    const int len = static_cast<int>(ds.trajectories[t].states.size());
    for (int i = 0; i + tau < len; ++i) out.push_back({t, i});
  }
  return out;
}

struct WindowBatch {
  Tensor x0;                    // (dim x B)
  Tensor u;                     // (k x B)
  std::vector<Tensor> targets;  // tau tensors, each (dim x B)
  int size = 0;
};

inline WindowBatch make_batch(const Dataset& ds, const std::vector<WindowRef>& refs,
                              std::size_t begin, std::size_t end, int tau) {
  const int dim = ds.state_size;
  const int b = static_cast<int>(end - begin);
  WindowBatch wb;
  wb.size = b;
  std::vector<double> x0(static_cast<std::size_t>(dim) * b);
  std::vector<double> u(static_cast<std::size_t>(b));
  std::vector<std::vector<double>> targets(static_cast<std::size_t>(tau),
                                           std::vector<double>(static_cast<std::size_t>(dim) * b));
  for (int col = 0; col < b; ++col) {
    const WindowRef& w = refs[begin + static_cast<std::size_t>(col)];
    const Trajectory& tr = ds.trajectories[static_cast<std::size_t>(w.trajectory)];
    for (int r = 0; r < dim; ++r)
      x0[static_cast<std::size_t>(r) * b + col] = tr.states[static_cast<std::size_t>(w.start)][static_cast<std::size_t>(r)];
    u[static_cast<std::size_t>(col)] = tr.u;
    for (int k = 0; k < tau; ++k)
      for (int r = 0; r < dim; ++r)
        targets[static_cast<std::size_t>(k)][static_cast<std::size_t>(r) * b + col] =
            tr.states[static_cast<std::size_t>(w.start + k + 1)][static_cast<std::size_t>(r)];
  }
  wb.x0 = Tensor(Shape{dim, b}, std::move(x0));
  wb.u = Tensor(Shape{1, b}, std::move(u));
  for (auto& t : targets) wb.targets.push_back(Tensor(Shape{dim, b}, std::move(t)));
  return wb;
}

// Sum of squared componentwise errors over the tau predicted states for every
// window in the batch (un-normalized; callers divide by B * tau * dim).
inline Tensor batch_loss(const AttachedModel& am, const WindowBatch& wb, double h, int tau,
                         int substeps) {
  auto rhs = [&](const Tensor& x, const Tensor& u) { return am.rhs(x, u); };
  RolloutResult r = odesolve(rhs, AugmentedState{wb.x0, wb.u}, h, tau, substeps);
  Tensor loss = scalar(0.0);
  for (int k = 1; k <= tau; ++k) {
    Tensor err = sub(r.state_at(k), wb.targets[static_cast<std::size_t>(k - 1)]);
    loss = add(loss, sum(mul(err, err)));
  }
  return loss;
}

// Spec-level single-window loss: differentiable rollout of tau steps from
// sample i of one trajectory.
inline Tensor window_loss(const Model& model, Tape& tape, const Dataset& ds, int trajectory,
                          int start, int tau, int substeps = 1) {
  const Trajectory& tr = ds.trajectories[static_cast<std::size_t>(trajectory)];
  if (start < 0 || start + tau >= static_cast<int>(tr.states.size()))
    throw std::invalid_argument("window exceeds trajectory length");
  std::vector<WindowRef> ref{{trajectory, start}};
  WindowBatch wb = make_batch(ds, ref, 0, 1, tau);
  AttachedModel am = model.attach(&tape);
  return batch_loss(am, WindowBatch{tape.leaf(wb.x0), tape.leaf(wb.u),
                                    [&] {
                                      std::vector<Tensor> t;
                                      for (auto& x : wb.targets) t.push_back(x);
                                      return t;
                                    }(),
                                    wb.size},
                    ds.h, tau, substeps);
}

// ---- training --------------------------------------------------------------------

namespace detail {

inline std::vector<std::vector<double>> snapshot(const ParamRefs& params) {
  std::vector<std::vector<double>> s;
  s.reserve(params.size());
  for (const auto& p : params) s.push_back(p.value->values());
  return s;
}

inline void restore(const ParamRefs& params, const std::vector<std::vector<double>>& snap) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i].value->mutable_values() = snap[i];
}

// Un-normalized batched loss in plain-value mode.
inline double value_loss(const Model& model, const Dataset& ds,
                         const std::vector<WindowRef>& refs, int tau, int substeps) {
  if (refs.empty()) return 0.0;
  WindowBatch wb = make_batch(ds, refs, 0, refs.size(), tau);
  AttachedModel am = model.attach(nullptr);
  return batch_loss(am, wb, ds.h, tau, substeps).value();
}

}  // namespace detail

// Full-batch (or minibatched) Adam over every window of every training
// trajectory. Deterministic under a fixed seed. A non-finite loss rolls back
// to the epoch-start parameters and halves the learning rate once; a second
// occurrence aborts.
inline TrainResult train(Model& model, const TrainConfig& cfg, const Dataset& train_ds,
                         const Dataset* test_ds = nullptr) {
  const auto t_begin = std::chrono::steady_clock::now();
  if (train_ds.trajectories.empty()) throw std::invalid_argument("empty training dataset");
  if (train_ds.state_size != model.spec().state_size())
    throw std::invalid_argument("dataset/model representation mismatch");
  cfg.validate(static_cast<int>(train_ds.trajectories[0].states.size()));

  ParamRefs params = model.params();
  AdamState adam = adam_init(params, cfg.beta1, cfg.beta2, cfg.eps_opt);
  Rng shuffle_rng(splitmix64(cfg.seed ^ 0x7368756666ULL));

  std::vector<WindowRef> windows = all_windows(train_ds, cfg.tau);
  std::vector<WindowRef> test_windows =
      test_ds ? all_windows(*test_ds, cfg.tau) : std::vector<WindowRef>{};
  const double norm =
      1.0 / (static_cast<double>(windows.size()) * cfg.tau * train_ds.state_size);
  const double test_norm =
      test_windows.empty()
          ? 0.0
          : 1.0 / (static_cast<double>(test_windows.size()) * cfg.tau * train_ds.state_size);

  TrainResult result;
  double lr = cfg.learning_rate;
  int rollbacks = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto epoch_start = detail::snapshot(params);
    if (cfg.batch_size == 0) {
      // keep full-batch order fixed; shuffling only matters for minibatches
    } else {
      shuffle_rng.shuffle(windows);
    }

    double epoch_loss_sum = 0.0;
    bool bad = false;
    const std::size_t bs =
        cfg.batch_size == 0 ? windows.size() : static_cast<std::size_t>(cfg.batch_size);
    for (std::size_t begin = 0; begin < windows.size() && !bad; begin += bs) {
      const std::size_t end = std::min(begin + bs, windows.size());

      // split the batch across independent tapes; gradients are reduced in a
      // fixed order so reruns are bit-identical
      const int n_parts = std::max(
          1, std::min<int>(cfg.threads, static_cast<int>((end - begin + 63) / 64)));
      struct PartResult {
        double loss = 0.0;
        std::vector<std::vector<double>> grads;
        bool finite = true;
        std::exception_ptr error;
      };
      std::vector<PartResult> parts(static_cast<std::size_t>(n_parts));

      auto run_part = [&](int pi) {
        PartResult& pr = parts[static_cast<std::size_t>(pi)];
        try {
          const std::size_t span = (end - begin + static_cast<std::size_t>(n_parts) - 1) /
                                   static_cast<std::size_t>(n_parts);
          const std::size_t pb = begin + span * static_cast<std::size_t>(pi);
          const std::size_t pe = std::min(pb + span, end);
          if (pb >= pe) return;
          WindowBatch wb = make_batch(train_ds, windows, pb, pe, cfg.tau);
          Tape tape;
          AttachedModel am = model.attach(&tape);
          WindowBatch taped{tape.leaf(wb.x0), tape.leaf(wb.u), wb.targets, wb.size};
          Tensor loss = batch_loss(am, taped, train_ds.h, cfg.tau, cfg.substeps);
          pr.loss = loss.value();
          if (!std::isfinite(pr.loss)) {
            pr.finite = false;
            return;
          }
          Gradients g = backward(loss);
          pr.grads.reserve(params.size());
          for (std::size_t i = 0; i < params.size(); ++i)
            pr.grads.push_back(g.at(tape.ref(static_cast<int>(i))).values());
          for (const auto& gv : pr.grads)
            for (double v : gv)
              if (!std::isfinite(v)) pr.finite = false;
        } catch (const IntegrationError&) {
          pr.finite = false;
        } catch (...) {
          pr.error = std::current_exception();
        }
      };

      std::vector<std::thread> workers;
      for (int pi = 1; pi < n_parts; ++pi) workers.emplace_back(run_part, pi);
      run_part(0);
      for (auto& w : workers) w.join();

      double batch_loss_value = 0.0;
      std::vector<std::vector<double>> grads;
      for (std::size_t i = 0; i < params.size(); ++i)
        grads.emplace_back(params[i].value->values().size(), 0.0);
      for (auto& pr : parts) {
        if (pr.error) std::rethrow_exception(pr.error);
        if (!pr.finite) {
          bad = true;
          break;
        }
        batch_loss_value += pr.loss;
        for (std::size_t i = 0; i < pr.grads.size(); ++i)
          for (std::size_t j = 0; j < pr.grads[i].size(); ++j) grads[i][j] += pr.grads[i][j];
      }
      if (bad) break;
      adam_step(adam, params, grads, lr);
      epoch_loss_sum += batch_loss_value;
    }

    if (bad) {
      detail::restore(params, epoch_start);
      ++rollbacks;
      if (rollbacks > 1)
        throw std::runtime_error(
            "training diverged twice (non-finite loss after learning-rate halving)");
      lr *= 0.5;
      --epoch;  // retry the epoch at the reduced rate
      continue;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss_sum * norm;
    rec.test_loss = test_windows.empty()
                        ? 0.0
                        : detail::value_loss(model, *test_ds, test_windows, cfg.tau,
                                             cfg.substeps) *
                              test_norm;
    result.history.push_back(rec);
  }

  result.metrics.param_count = param_count(params);
  result.final_lr = lr;
  result.nan_rollbacks = rollbacks;
  result.metrics.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_begin).count();
  return result;
}

// ---- evaluation --------------------------------------------------------------------

enum class EvalKind { Train, Test, Prediction };

struct SplitError {
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<double> per_trajectory;
};

namespace detail {
inline SplitError mean_std(std::vector<double> vals) {
  SplitError e;
  e.per_trajectory = std::move(vals);
  const auto& v = e.per_trajectory;
  if (v.empty()) return e;
  double s = 0.0;
  for (double x : v) s += x;
  e.mean = s / static_cast<double>(v.size());
  double acc = 0.0;
  for (double x : v) acc += (x - e.mean) * (x - e.mean);
  e.stddev = std::sqrt(acc / static_cast<double>(v.size()));
  return e;
}
}  // namespace detail

// Windowed per-trajectory error: mean of the window losses of one trajectory,
// normalized by (tau * state components). One batched rollout covers every
// window; per-window errors are column sums.
inline SplitError windowed_error(const Model& model, const Dataset& ds, int tau, int substeps) {
  std::vector<WindowRef> refs = all_windows(ds, tau);
  WindowBatch wb = make_batch(ds, refs, 0, refs.size(), tau);
  AttachedModel am = model.attach(nullptr);
  auto rhs = [&](const Tensor& x, const Tensor& u) { return am.rhs(x, u); };
  RolloutResult r = odesolve(rhs, AugmentedState{wb.x0, wb.u}, ds.h, tau, substeps);

  std::vector<double> per_window(refs.size(), 0.0);
  const int dim = ds.state_size;
  for (int k = 1; k <= tau; ++k) {
    Tensor err = sub(r.state_at(k), wb.targets[static_cast<std::size_t>(k - 1)]);
    Tensor colsum = matmul(ones(Shape{1, dim}), mul(err, err));  // {1, B}
    const auto cs = colsum.values();
    for (std::size_t i = 0; i < per_window.size(); ++i) per_window[i] += cs[i];
  }

  std::vector<double> traj_sum(ds.trajectories.size(), 0.0);
  std::vector<int> traj_windows(ds.trajectories.size(), 0);
  for (std::size_t i = 0; i < refs.size(); ++i) {
    traj_sum[static_cast<std::size_t>(refs[i].trajectory)] += per_window[i];
    ++traj_windows[static_cast<std::size_t>(refs[i].trajectory)];
  }
  std::vector<double> per_traj(ds.trajectories.size());
  for (std::size_t t = 0; t < per_traj.size(); ++t)
    per_traj[t] = traj_sum[t] / (static_cast<double>(traj_windows[t]) * tau * dim);
  return detail::mean_std(std::move(per_traj));
}

// Prediction error: from every training-trajectory initial state, roll the
// model and the ground truth 40 steps forward at u = 0; mean squared error
// per trajectory over steps and components. The batched rollout covers all
// trajectories at once; if any column diverges, trajectories are isolated
// and the divergent ones report infinity.
inline SplitError prediction_error(const Model& model, const Dataset& train_ds, Task task,
                                   const SimConfig& sim, int steps = 40, int substeps = 1) {
  AttachedModel am = model.attach(nullptr);
  auto rhs = [&](const Tensor& x, const Tensor& u) { return am.rhs(x, u); };
  const int dim = train_ds.state_size;
  const int b = static_cast<int>(train_ds.trajectories.size());

  std::vector<RolloutResult> truths;
  truths.reserve(static_cast<std::size_t>(b));
  std::vector<double> x0(static_cast<std::size_t>(dim) * b);
  for (int col = 0; col < b; ++col) {
    const auto& tr = train_ds.trajectories[static_cast<std::size_t>(col)];
    for (int r = 0; r < dim; ++r) x0[static_cast<std::size_t>(r) * b + col] = tr.states[0][static_cast<std::size_t>(r)];
    truths.push_back(
        truth_rollout(task, sim, Tensor(Shape{dim}, tr.states[0]), 0.0, steps, sim.truth_substeps));
  }

  std::vector<double> per_traj(static_cast<std::size_t>(b), 0.0);
  try {
    RolloutResult pred = odesolve(rhs, AugmentedState{Tensor(Shape{dim, b}, std::move(x0)),
                                                      zeros(Shape{1, b})},
                                  train_ds.h, steps, substeps);
    for (int s = 1; s <= steps; ++s) {
      Tensor ps = pred.state_at(s);
      for (int col = 0; col < b; ++col) {
        const auto ts = truths[static_cast<std::size_t>(col)].state_at(s).values();
        for (int r = 0; r < dim; ++r) {
          const double d = ps.at(r, col) - ts[static_cast<std::size_t>(r)];
          per_traj[static_cast<std::size_t>(col)] += d * d;
        }
      }
    }
  } catch (const IntegrationError&) {
    // isolate: divergent trajectories count as infinite error
    for (int col = 0; col < b; ++col) {
      const auto& tr = train_ds.trajectories[static_cast<std::size_t>(col)];
      double acc = 0.0;
      bool finite = true;
      try {
        RolloutResult pred = odesolve(rhs, AugmentedState{Tensor(Shape{dim}, tr.states[0]),
                                                          vec({0.0})},
                                      train_ds.h, steps, substeps);
        for (int s = 1; s <= steps; ++s) {
          const auto ps = pred.state_at(s).values();
          const auto ts = truths[static_cast<std::size_t>(col)].state_at(s).values();
          for (int r = 0; r < dim; ++r)
            acc += (ps[static_cast<std::size_t>(r)] - ts[static_cast<std::size_t>(r)]) *
                   (ps[static_cast<std::size_t>(r)] - ts[static_cast<std::size_t>(r)]);
        }
      } catch (const IntegrationError&) {
        finite = false;
      }
      per_traj[static_cast<std::size_t>(col)] =
          finite ? acc : std::numeric_limits<double>::infinity();
    }
    for (auto& v : per_traj)
      if (std::isfinite(v)) v /= static_cast<double>(steps) * dim;
    return detail::mean_std(std::move(per_traj));
  }
  for (auto& v : per_traj) v /= static_cast<double>(steps) * dim;
  return detail::mean_std(std::move(per_traj));
}

inline SplitError evaluate(const Model& model, const Dataset& ds, EvalKind kind, int tau,
                           Task task, const SimConfig& sim, int substeps = 1) {
  if (kind == EvalKind::Prediction) return prediction_error(model, ds, task, sim, 40, substeps);
  return windowed_error(model, ds, tau, substeps);
}

// ---- scaling estimation (embedded tasks without true momentum data) ----------------

struct BetaEstimate {
  bool defined = false;
  double beta = 0.0;
};

// Least-squares scalar minimizing || beta * learned - truth ||^2 on the grid.
inline BetaEstimate estimate_beta(const std::vector<double>& learned,
                                  const std::vector<double>& truth) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < learned.size(); ++i) {
    num += learned[i] * truth[i];
    den += learned[i] * learned[i];
  }
  BetaEstimate e;
  if (den <= 0.0) return e;  // degenerate all-zero learned function
  e.defined = true;
  e.beta = num / den;
  return e;
}

// Learned inverse-mass over a uniform angle grid vs the constant truth.
inline BetaEstimate estimate_beta_mass_inv(const Model& model, int grid_points = 101) {
  AttachedModel am = model.attach(nullptr);
  std::vector<double> learned, truth;
  for (int i = 0; i < grid_points; ++i) {
    const double q = -M_PI + 2.0 * M_PI * i / (grid_points - 1);
    Tensor coords = mat(2, 1, {std::cos(q), std::sin(q)});
    learned.push_back(am.mass_inv_entries(coords).at(0, 0));
    truth.push_back(PendulumTruth::mass_inv(q));
  }
  return estimate_beta(learned, truth);
}

}  // namespace phlearn
