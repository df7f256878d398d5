#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "phlearn/simlab.hpp"

using namespace phlearn;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string tmp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST(PendulumTruth, RhsExamples) {
  double dq, dp;
  pendulum_truth_rhs(0, 0, 0, dq, dp);
  EXPECT_DOUBLE_EQ(dq, 0.0);
  EXPECT_DOUBLE_EQ(dp, 0.0);
  pendulum_truth_rhs(M_PI / 2, 1.0, 0.0, dq, dp);
  EXPECT_DOUBLE_EQ(dq, 3.0);
  EXPECT_DOUBLE_EQ(dp, -5.3);
  pendulum_truth_rhs(0.0, 0.0, 2.0, dq, dp);
  EXPECT_DOUBLE_EQ(dq, 0.0);
  EXPECT_DOUBLE_EQ(dp, 2.0);
}

TEST(EmbeddedPendulumTruth, RhsExamples) {
  double d1, d2, d3;
  embedded_pendulum_truth_rhs(1, 0, 0, 0, d1, d2, d3);
  EXPECT_DOUBLE_EQ(d1, 0.0);
  EXPECT_DOUBLE_EQ(d2, 0.0);
  EXPECT_DOUBLE_EQ(d3, 0.0);

  // x3 = qdot = 1 at q = pi/2: pdot = -5 - 0.3/3, xdot3 = 3 pdot = -15.3
  embedded_pendulum_truth_rhs(0, 1, 1, 0, d1, d2, d3);
  EXPECT_DOUBLE_EQ(d1, -1.0);
  EXPECT_DOUBLE_EQ(d2, 0.0);
  EXPECT_DOUBLE_EQ(d3, -15.3);

  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const double q = rng.uniform(-M_PI, M_PI), qd = rng.uniform(-3, 3);
    embedded_pendulum_truth_rhs(std::cos(q), std::sin(q), qd, 0.5, d1, d2, d3);
    EXPECT_NEAR(std::cos(q) * d1 + std::sin(q) * d2, 0.0, 1e-12);
  }

  EXPECT_THROW(embedded_pendulum_truth_rhs(1.0, 0.5, 0, 0, d1, d2, d3), std::invalid_argument);
}

TEST(CartPoleTruth, EquilibriumAndEnergy) {
  SimConfig c;
  std::array<double, 5> dx;
  cartpole_truth_rhs({0.3, 1.0, 0.0, 0.0, 0.0}, 0.0, c, dx);
  for (double v : dx) EXPECT_DOUBLE_EQ(v, 0.0);

  // damped: energy non-increasing along a rollout with u = 0
  Tensor init = vec({0.2, std::cos(0.8), std::sin(0.8), 0.5, -0.4});
  RolloutResult r = truth_rollout(Task::CartPole, c, init, 0.0, 40, 10);
  double prev = cartpole_truth_energy({0.2, std::cos(0.8), std::sin(0.8), 0.5, -0.4}, c);
  for (int i = 1; i <= 40; ++i) {
    const auto& s = r.state_at(i).values();
    const double e = cartpole_truth_energy({s[0], s[1], s[2], s[3], s[4]}, c);
    EXPECT_LE(e, prev + 1e-10);
    prev = e;
  }

  // conservative limit: zero damping conserves energy to integrator tolerance
  SimConfig c0 = c;
  c0.cart_damping = 0.0;
  c0.pole_damping = 0.0;
  RolloutResult rc = truth_rollout(Task::CartPole, c0, init, 0.0, 40, 10);
  const double e0 = cartpole_truth_energy({0.2, std::cos(0.8), std::sin(0.8), 0.5, -0.4}, c0);
  for (int i = 1; i <= 40; ++i) {
    const auto& s = rc.state_at(i).values();
    EXPECT_NEAR(cartpole_truth_energy({s[0], s[1], s[2], s[3], s[4]}, c0), e0, 1e-7);
  }
}

TEST(AcrobotTruth, EquilibriumAndEnergy) {
  SimConfig c;
  std::array<double, 6> dx;
  acrobot_truth_rhs({1, 1, 0, 0, 0, 0}, 0.0, c, dx);
  for (double v : dx) EXPECT_DOUBLE_EQ(v, 0.0);

  std::array<double, 6> x0 = {std::cos(0.6), std::cos(-0.3), std::sin(0.6), std::sin(-0.3),
                              0.7, -0.2};
  Tensor init = vec({x0[0], x0[1], x0[2], x0[3], x0[4], x0[5]});
  RolloutResult r = truth_rollout(Task::Acrobot, c, init, 0.0, 40, 10);
  double prev = acrobot_truth_energy(x0, c);
  for (int i = 1; i <= 40; ++i) {
    const auto& s = r.state_at(i).values();
    const double e = acrobot_truth_energy({s[0], s[1], s[2], s[3], s[4], s[5]}, c);
    EXPECT_LE(e, prev + 1e-10);
    prev = e;
  }

  SimConfig c0 = c;
  c0.joint1_damping = 0.0;
  c0.joint2_damping = 0.0;
  RolloutResult rc = truth_rollout(Task::Acrobot, c0, init, 0.0, 40, 10);
  const double e0 = acrobot_truth_energy(x0, c0);
  for (int i = 1; i <= 40; ++i) {
    const auto& s = rc.state_at(i).values();
    EXPECT_NEAR(acrobot_truth_energy({s[0], s[1], s[2], s[3], s[4], s[5]}, c0), e0, 1e-7);
  }
}

TEST(Datasets, CartesianCountAndControls) {
  SimConfig c;
  c.train_inits = 25;
  DatasetPair ds = generate_dataset(Task::PendulumPhase, c, 42);
  EXPECT_EQ(ds.train.trajectories.size(), 125u);  // 25 inits x 5 controls
  for (const auto& t : ds.train.trajectories) {
    const bool in_set = t.u == -2.0 || t.u == -1.0 || t.u == 0.0 || t.u == 1.0 || t.u == 2.0;
    EXPECT_TRUE(in_set);
    EXPECT_EQ(t.states.size(), 20u);  // samples per trajectory
    EXPECT_EQ(t.times.size(), 20u);
    for (std::size_t s = 1; s < t.times.size(); ++s)
      EXPECT_GT(t.times[s], t.times[s - 1]);
  }
}

TEST(Datasets, SameSeedReproducesBitIdenticalFiles) {
  SimConfig c;
  c.train_inits = 3;
  c.test_inits = 2;
  const std::string p1 = tmp_path("phlearn_ds_a.csv");
  const std::string p2 = tmp_path("phlearn_ds_b.csv");
  DatasetPair a = generate_dataset(Task::PendulumEmbedded, c, 7);
  DatasetPair b = generate_dataset(Task::PendulumEmbedded, c, 7);
  write_dataset(p1, a.train);
  write_dataset(p2, b.train);
  EXPECT_EQ(slurp(p1), slurp(p2));
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST(Datasets, TrainAndTestAreDisjoint) {
  SimConfig c;
  c.train_inits = 4;
  c.test_inits = 4;
  DatasetPair ds = generate_dataset(Task::PendulumPhase, c, 11);
  for (const auto& tr : ds.train.trajectories)
    for (const auto& te : ds.test.trajectories)
      EXPECT_NE(tr.states[0], te.states[0]);
}

TEST(Datasets, RoundTripIsExact) {
  SimConfig c;
  c.train_inits = 2;
  c.test_inits = 1;
  DatasetPair ds = generate_dataset(Task::CartPole, c, 5);
  const std::string p = tmp_path("phlearn_ds_rt.csv");
  write_dataset(p, ds.train);
  Dataset back = read_dataset(p);
  ASSERT_EQ(back.trajectories.size(), ds.train.trajectories.size());
  EXPECT_EQ(back.h, ds.train.h);
  EXPECT_EQ(back.state_size, ds.train.state_size);
  for (std::size_t i = 0; i < back.trajectories.size(); ++i) {
    const auto& a = ds.train.trajectories[i];
    const auto& b = back.trajectories[i];
    EXPECT_EQ(a.u, b.u);
    ASSERT_EQ(a.states.size(), b.states.size());
    for (std::size_t s = 0; s < a.states.size(); ++s)
      for (std::size_t k = 0; k < a.states[s].size(); ++k)
        EXPECT_EQ(a.states[s][k], b.states[s][k]);  // %.17g round trip is exact
  }
  std::filesystem::remove(p);
}

TEST(Datasets, TruthIsIntegratorConverged) {
  // halving the truth substep moves any state by <= 1e-8
  SimConfig c;
  c.train_inits = 2;
  c.test_inits = 1;
  SimConfig c2 = c;
  c2.truth_substeps = 40;
  for (Task task : {Task::PendulumPhase, Task::PendulumEmbedded, Task::CartPole, Task::Acrobot}) {
    DatasetPair a = generate_dataset(task, c, 3);
    DatasetPair b = generate_dataset(task, c2, 3);
    double worst = 0.0;
    for (std::size_t i = 0; i < a.train.trajectories.size(); ++i)
      for (std::size_t s = 0; s < a.train.trajectories[i].states.size(); ++s)
        for (std::size_t k = 0; k < a.train.trajectories[i].states[s].size(); ++k)
          worst = std::max(worst, std::fabs(a.train.trajectories[i].states[s][k] -
                                            b.train.trajectories[i].states[s][k]));
    EXPECT_LE(worst, 1e-8) << task_info(task).name;
  }
}

TEST(Datasets, EmbeddedStatesStayOnCircle) {
  SimConfig c;
  c.train_inits = 5;
  c.test_inits = 1;
  DatasetPair ds = generate_dataset(Task::PendulumEmbedded, c, 13);
  for (const auto& t : ds.train.trajectories)
    for (const auto& s : t.states)
      EXPECT_NEAR(s[0] * s[0] + s[1] * s[1], 1.0, 1e-9);

  DatasetPair da = generate_dataset(Task::Acrobot, c, 13);
  for (const auto& t : da.train.trajectories)
    for (const auto& s : t.states) {
      EXPECT_NEAR(s[0] * s[0] + s[2] * s[2], 1.0, 1e-9);
      EXPECT_NEAR(s[1] * s[1] + s[3] * s[3], 1.0, 1e-9);
    }
}

TEST(Datasets, PendulumZeroInputDissipatesEnergy) {
  SimConfig c;
  c.train_inits = 10;
  c.test_inits = 1;
  DatasetPair ds = generate_dataset(Task::PendulumPhase, c, 17);
  for (const auto& t : ds.train.trajectories) {
    if (t.u != 0.0) continue;
    double prev = pendulum_truth_energy(t.states[0][0], t.states[0][1]);
    for (std::size_t s = 1; s < t.states.size(); ++s) {
      const double e = pendulum_truth_energy(t.states[s][0], t.states[s][1]);
      EXPECT_LE(e, prev + 1e-12);
      prev = e;
    }
  }
}
