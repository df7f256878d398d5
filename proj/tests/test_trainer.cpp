#include <gtest/gtest.h>

#include <cmath>

#include "phlearn/trainer.hpp"
#include "testing_util.hpp"

using namespace phlearn;

namespace {

SimConfig tiny_sim() {
  SimConfig c;
  c.train_inits = 3;
  c.test_inits = 2;
  return c;
}

ModelSpec tiny_spec(Variant v, Representation rep, int n, int m, int width = 4) {
  ModelSpec s;
  s.variant = v;
  s.rep = rep;
  s.trans_dof = n;
  s.angle_dof = m;
  s.hidden = {width};
  s.naive_hidden = {width};
  s.geometric_hidden = {width};
  s.unstructured_hidden = {width};
  return s;
}

}  // namespace

TEST(WindowLoss, TruthParametersReachIntegratorFloor) {
  SimConfig sim = tiny_sim();
  DatasetPair ds = generate_dataset(Task::PendulumPhase, sim, 3);
  Model truth = Model::pendulum_truth(Representation::Phase);
  for (int t = 0; t < static_cast<int>(ds.train.trajectories.size()); ++t) {
    const int len = static_cast<int>(ds.train.trajectories[t].states.size());
    for (int i = 0; i + 3 < len; i += 4) {
      Tape tape;
      Tensor loss = window_loss(truth, tape, ds.train, t, i, 3);
      EXPECT_LE(loss.value(), 1e-8) << "trajectory " << t << " window " << i;
    }
  }
}

TEST(WindowLoss, TauOneIsSingleStepSquaredError) {
  SimConfig sim = tiny_sim();
  DatasetPair ds = generate_dataset(Task::PendulumPhase, sim, 5);
  Model model(tiny_spec(Variant::DissipativeSymoden, Representation::Phase, 1, 0));
  Rng rng(8);
  model.init(rng);

  const Trajectory& tr = ds.train.trajectories[0];
  Tape tape;
  Tensor loss = window_loss(model, tape, ds.train, 0, 4, 1);

  // one explicit RK4 step and a hand-summed squared error
  auto am = model.attach(nullptr);
  auto rhs = [&](const Tensor& x, const Tensor& u) { return am.rhs(x, u); };
  RolloutResult r = odesolve(rhs, AugmentedState{Tensor(Shape{2}, tr.states[4]), vec({tr.u})},
                             ds.train.h, 1);
  const auto pred = r.state_at(1).values();
  double expect = 0.0;
  for (int k = 0; k < 2; ++k)
    expect += (pred[k] - tr.states[5][k]) * (pred[k] - tr.states[5][k]);
  EXPECT_NEAR(loss.value(), expect, 1e-14);
}

TEST(WindowLoss, BatchOrderInvariant) {
  SimConfig sim = tiny_sim();
  DatasetPair ds = generate_dataset(Task::PendulumPhase, sim, 5);
  Model model(tiny_spec(Variant::DissipativeSymoden, Representation::Phase, 1, 0));
  Rng rng(12);
  model.init(rng);
  auto am = model.attach(nullptr);

  std::vector<WindowRef> refs = all_windows(ds.train, 3);
  WindowBatch fwd = make_batch(ds.train, refs, 0, refs.size(), 3);
  std::reverse(refs.begin(), refs.end());
  WindowBatch rev = make_batch(ds.train, refs, 0, refs.size(), 3);

  const double a = batch_loss(am, fwd, ds.train.h, 3, 1).value();
  const double b = batch_loss(am, rev, ds.train.h, 3, 1).value();
  EXPECT_NEAR(a, b, 1e-12 * std::max(1.0, std::fabs(a)));
}

TEST(WindowLoss, GradientGateOnSmallTaskOneModel) {
  // d(window_loss)/d(theta) vs finite differences, 3-step window, width-4 net
  SimConfig sim = tiny_sim();
  DatasetPair ds = generate_dataset(Task::PendulumPhase, sim, 9);
  Model model(tiny_spec(Variant::DissipativeSymoden, Representation::Phase, 1, 0));
  Rng rng(31);
  model.init(rng);
  ParamRefs refs = model.params();

  Tape tape;
  Tensor loss = window_loss(model, tape, ds.train, 2, 5, 3);
  Gradients g = backward(loss);
  std::vector<double> analytic;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    Tensor gi = g.at(tape.ref(static_cast<int>(i)));
    analytic.insert(analytic.end(), gi.values().begin(), gi.values().end());
  }

  std::vector<double> numeric;
  for (auto& r : refs) {
    auto eval = [&](const std::vector<double>& vals) {
      std::vector<double> saved = r.value->values();
      r.value->mutable_values() = vals;
      Tape t2;
      double out = window_loss(model, t2, ds.train, 2, 5, 3).value();
      r.value->mutable_values() = saved;
      return out;
    };
    auto fd = phtest::fd_gradient(eval, r.value->values());
    numeric.insert(numeric.end(), fd.begin(), fd.end());
  }
  EXPECT_LE(phtest::max_rel_err(analytic, numeric), 1e-4);
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  Model model(tiny_spec(Variant::Symoden, Representation::Phase, 1, 0));
  Rng rng(3);
  model.init(rng);
  ParamRefs refs = model.params();
  auto before = refs[0].value->values();
  AdamState st = adam_init(refs, 0.9, 0.999, 1e-8);
  std::vector<std::vector<double>> grads;
  for (auto& r : refs) grads.emplace_back(r.value->values().size(), 0.0);
  adam_step(st, refs, grads, 1e-3);
  EXPECT_EQ(refs[0].value->values(), before);
}

TEST(Adam, FirstStepMagnitudeNearLearningRate) {
  // bias correction makes mhat/sqrt(vhat) ~ sign(g) at t = 1
  Tensor p = vec({1.0, -2.0});
  ParamRefs refs{{"p", &p}};
  AdamState st = adam_init(refs, 0.9, 0.999, 1e-8);
  adam_step(st, refs, {{0.3, -0.7}}, 1e-3);
  EXPECT_NEAR(p.at(0), 1.0 - 1e-3, 1e-6);
  EXPECT_NEAR(p.at(1), -2.0 + 1e-3, 1e-6);
}

TEST(Adam, EqualGradientsMoveIdentically) {
  Tensor p = vec({0.4, 0.4});
  ParamRefs refs{{"p", &p}};
  AdamState st = adam_init(refs, 0.9, 0.999, 1e-8);
  for (int i = 0; i < 5; ++i) adam_step(st, refs, {{0.25, 0.25}}, 1e-2);
  EXPECT_EQ(p.at(0), p.at(1));
}

TEST(Train, LossDropsOnSmokeRun) {
  SimConfig sim = tiny_sim();
  DatasetPair ds = generate_dataset(Task::PendulumPhase, sim, 77);
  Model model(tiny_spec(Variant::DissipativeSymoden, Representation::Phase, 1, 0, 8));
  Rng rng(41);
  model.init(rng);

  TrainConfig cfg;
  cfg.epochs = 60;
  cfg.learning_rate = 5e-3;
  cfg.seed = 1;
  TrainResult res = train(model, cfg, ds.train, &ds.test);
  ASSERT_EQ(res.history.size(), 60u);
  EXPECT_LT(res.history.back().train_loss, res.history.front().train_loss);
  EXPECT_GT(res.metrics.param_count, 0);
}

TEST(Train, SeedFixedRerunIsBitExact) {
  SimConfig sim = tiny_sim();
  DatasetPair ds = generate_dataset(Task::PendulumPhase, sim, 5);
  TrainConfig cfg;
  cfg.epochs = 8;
  cfg.batch_size = 16;
  cfg.seed = 9;

  auto run = [&] {
    Model model(tiny_spec(Variant::DissipativeSymoden, Representation::Phase, 1, 0));
    Rng rng(2);
    model.init(rng);
    TrainResult r = train(model, cfg, ds.train, &ds.test);
    std::vector<double> out;
    for (const auto& e : r.history) {
      out.push_back(e.train_loss);
      out.push_back(e.test_loss);
    }
    for (auto& p : model.params()) {
      const auto& v = p.value->values();
      out.insert(out.end(), v.begin(), v.end());
    }
    return out;
  };
  const auto a = run();
  const auto b = run();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Train, RepresentationMismatchIsConfigError) {
  SimConfig sim = tiny_sim();
  DatasetPair ds = generate_dataset(Task::PendulumEmbedded, sim, 5);
  Model model(tiny_spec(Variant::DissipativeSymoden, Representation::Phase, 1, 0));
  TrainConfig cfg;
  EXPECT_THROW(train(model, cfg, ds.train), std::invalid_argument);
}

TEST(Train, DivergenceAbortsAfterOneRollback) {
  SimConfig sim = tiny_sim();
  DatasetPair ds = generate_dataset(Task::PendulumPhase, sim, 5);
  Model model(tiny_spec(Variant::DissipativeSymoden, Representation::Phase, 1, 0));
  // poison the mass-inverse factor so the very first rollout overflows
  for (auto& p : model.params())
    if (p.name == "m_inv/b1")
      for (auto& v : p.value->mutable_values()) v = 1e160;
  TrainConfig cfg;
  cfg.epochs = 3;
  EXPECT_THROW(train(model, cfg, ds.train), std::runtime_error);
}

TEST(Evaluate, PureAndRepeatable) {
  SimConfig sim = tiny_sim();
  DatasetPair ds = generate_dataset(Task::PendulumPhase, sim, 19);
  Model model(tiny_spec(Variant::DissipativeSymoden, Representation::Phase, 1, 0));
  Rng rng(4);
  model.init(rng);

  SplitError a = evaluate(model, ds.train, EvalKind::Train, 3, Task::PendulumPhase, sim);
  SplitError b = evaluate(model, ds.train, EvalKind::Train, 3, Task::PendulumPhase, sim);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.stddev, b.stddev);

  SplitError p1 = evaluate(model, ds.train, EvalKind::Prediction, 3, Task::PendulumPhase, sim);
  SplitError p2 = evaluate(model, ds.train, EvalKind::Prediction, 3, Task::PendulumPhase, sim);
  EXPECT_EQ(p1.mean, p2.mean);
  EXPECT_GE(p1.mean, 0.0);
}

TEST(Evaluate, TruthModelPredictionErrorNearZero) {
  SimConfig sim = tiny_sim();
  DatasetPair ds = generate_dataset(Task::PendulumPhase, sim, 23);
  Model truth = Model::pendulum_truth(Representation::Phase);
  SplitError pred = evaluate(truth, ds.train, EvalKind::Prediction, 3, Task::PendulumPhase, sim);
  EXPECT_LE(pred.mean, 1e-6);
}

TEST(Evaluate, TruthFixedPointHasVanishingGradients) {
  // gradient norm at the exact truth functions is < 1e-4 of the norm after
  // perturbing those same parameters
  SimConfig sim = tiny_sim();
  DatasetPair ds = generate_dataset(Task::PendulumPhase, sim, 29);
  std::vector<WindowRef> refs;

  auto grad_norm = [&](Model& m) {
    std::vector<WindowRef> windows = all_windows(ds.train, 3);
    WindowBatch wb = make_batch(ds.train, windows, 0, windows.size(), 3);
    Tape tape;
    AttachedModel am = m.attach(&tape);
    WindowBatch taped{tape.leaf(wb.x0), tape.leaf(wb.u), wb.targets, wb.size};
    Gradients g = backward(batch_loss(am, taped, ds.train.h, 3, 1));
    double acc = 0.0;
    const std::size_t n_params = m.params().size();
    for (std::size_t i = 0; i < n_params; ++i)
      for (double v : g.at(tape.ref(static_cast<int>(i))).values()) acc += v * v;
    return std::sqrt(acc);
  };

  Model truth = Model::pendulum_truth(Representation::Phase);
  const double g_truth = grad_norm(truth);

  Model off = Model::pendulum_truth(Representation::Phase);
  Rng rng(6);
  for (auto& p : off.params())
    for (auto& v : p.value->mutable_values()) v += rng.uniform(0.5, 1.0);
  const double g_off = grad_norm(off);

  EXPECT_LE(g_truth, 1e-4 * g_off);
}

TEST(Beta, ClosedFormScalings) {
  Model truth = Model::pendulum_truth(Representation::Embedded);
  BetaEstimate b1 = estimate_beta_mass_inv(truth);
  ASSERT_TRUE(b1.defined);
  EXPECT_NEAR(b1.beta, 1.0, 1e-12);

  // learned == 2x truth -> beta = 0.5
  ModelSpec spec;
  spec.variant = Variant::DissipativeSymoden;
  spec.rep = Representation::Embedded;
  spec.trans_dof = 0;
  spec.angle_dof = 1;
  Model twice = Model::with_slots(
      spec, std::make_unique<ConstantFunctionSlot>("m_inv", mat(1, 1, {6.0})),
      std::make_unique<CosinePotentialSlot>("v", 5.0, Representation::Embedded, 0, 1),
      std::make_unique<ConstantFunctionSlot>("g", mat(1, 1, {1.0})),
      std::make_unique<ConstantFunctionSlot>("d", mat(2, 2, {0, 0, 0, 0.1})));
  BetaEstimate b2 = estimate_beta_mass_inv(twice);
  ASSERT_TRUE(b2.defined);
  EXPECT_NEAR(b2.beta, 0.5, 1e-12);

  // degenerate all-zero learned function
  BetaEstimate b3 = estimate_beta({0.0, 0.0, 0.0}, {3.0, 3.0, 3.0});
  EXPECT_FALSE(b3.defined);
}
