#pragma once

// Ground-truth simulators for the four benchmark tasks and the dataset
// machinery built on them. All angles are measured from the hanging (stable)
// configuration; damping enters as viscous generalized forces, which keeps
// every system inside the port-Hamiltonian model class with
// D = [[0, 0], [0, C]].

#include <array>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "phlearn/models.hpp"
#include "phlearn/odeint.hpp"
#include "phlearn/rng.hpp"
#include "phlearn/tensor.hpp"

namespace phlearn {

enum class Task { PendulumPhase = 1, PendulumEmbedded = 2, CartPole = 3, Acrobot = 4 };

inline Task parse_task(int id) {
  if (id < 1 || id > 4) throw std::invalid_argument("task id must be 1..4");
  return static_cast<Task>(id);
}

struct TaskInfo {
  Task task;
  const char* name;
  Representation rep;
  int trans_dof;
  int angle_dof;
  int inputs;
  int state_size() const { return 2 * trans_dof + 3 * angle_dof; }
  int coord_size() const { return trans_dof + 2 * angle_dof; }
};

inline TaskInfo task_info(Task t) {
  switch (t) {
    case Task::PendulumPhase:
      return {t, "pendulum-phase", Representation::Phase, 1, 0, 1};
    case Task::PendulumEmbedded:
      return {t, "pendulum-embedded", Representation::Embedded, 0, 1, 1};
    case Task::CartPole:
      return {t, "cartpole", Representation::Hybrid, 1, 1, 1};
    case Task::Acrobot:
      return {t, "acrobot", Representation::Embedded, 0, 2, 1};
  }
  throw std::invalid_argument("bad task");
}

// Physical and sampling parameters; every field is a config key.
struct SimConfig {
  double h = 0.05;           // observation interval
  int samples = 20;          // observations per trajectory (19 intervals)
  int train_inits = 25;
  int test_inits = 25;
  std::vector<double> control_set = {-2.0, -1.0, 0.0, 1.0, 2.0};
  int truth_substeps = 20;   // RK4 substeps per interval for ground truth

  double gravity = 9.8;
  double cart_mass = 1.0;
  double pole_mass = 1.0;
  double pole_length = 1.0;
  double cart_damping = 0.1;
  double pole_damping = 0.1;
  double link1_mass = 1.0;
  double link2_mass = 1.0;
  double link1_length = 1.0;
  double link2_length = 1.0;
  double joint1_damping = 0.1;
  double joint2_damping = 0.1;
};

// ---- truth right-hand sides ---------------------------------------------------

// qdot = 3p, pdot = -5 sin q - 0.3 p + u
inline void pendulum_truth_rhs(double q, double p, double u, double& dq, double& dp) {
  dq = 3.0 * p;
  dp = -5.0 * std::sin(q) - 0.3 * p + u;
}

inline double pendulum_truth_energy(double q, double p) {
  return 1.5 * p * p + 5.0 * (1.0 - std::cos(q));
}

// Same dynamics observed as (cos q, sin q, qdot).
inline void embedded_pendulum_truth_rhs(double x1, double x2, double x3, double u, double& d1,
                                        double& d2, double& d3) {
  const double circle = x1 * x1 + x2 * x2;
  if (std::fabs(circle - 1.0) > 1e-9)
    throw std::invalid_argument("embedded pendulum state off the unit circle");
  d1 = -x2 * x3;
  d2 = x1 * x3;
  // pdot with p = x3 / 3; xdot3 = 3 pdot
  d3 = 3.0 * (-5.0 * x2 - 0.1 * x3 + u);
}

// Cart-pole in the hybrid layout [r, cos phi, sin phi, rdot, phidot]; phi
// measured from the hanging pole, u is the force on the cart.
inline void cartpole_truth_rhs(const std::array<double, 5>& x, double u, const SimConfig& c,
                               std::array<double, 5>& dx) {
  const double cphi = x[1], sphi = x[2], rdot = x[3], phidot = x[4];
  const double mc = c.cart_mass, mp = c.pole_mass, l = c.pole_length, g = c.gravity;
  const double m11 = mc + mp;
  const double m12 = mp * l * cphi;
  const double m22 = mp * l * l;
  const double rhs_r = u - c.cart_damping * rdot + mp * l * sphi * phidot * phidot;
  const double rhs_phi = -c.pole_damping * phidot - mp * g * l * sphi;
  const double det = m11 * m22 - m12 * m12;
  const double rddot = (m22 * rhs_r - m12 * rhs_phi) / det;
  const double phiddot = (m11 * rhs_phi - m12 * rhs_r) / det;
  dx = {rdot, -sphi * phidot, cphi * phidot, rddot, phiddot};
}

inline double cartpole_truth_energy(const std::array<double, 5>& x, const SimConfig& c) {
  const double cphi = x[1], rdot = x[3], phidot = x[4];
  const double mc = c.cart_mass, mp = c.pole_mass, l = c.pole_length;
  const double kinetic = 0.5 * (mc + mp) * rdot * rdot + mp * l * cphi * rdot * phidot +
                         0.5 * mp * l * l * phidot * phidot;
  return kinetic - mp * c.gravity * l * cphi;
}

// Two-link pendulum with torque on the second joint; embedded layout
// [cos phi1, cos phi2, sin phi1, sin phi2, phidot1, phidot2], phi2 relative.
inline void acrobot_truth_rhs(const std::array<double, 6>& x, double u, const SimConfig& c,
                              std::array<double, 6>& dx) {
  const double c1 = x[0], c2 = x[1], s1 = x[2], s2 = x[3], w1 = x[4], w2 = x[5];
  for (double circ : {c1 * c1 + s1 * s1, c2 * c2 + s2 * s2})
    if (std::fabs(circ - 1.0) > 1e-9)
      throw std::invalid_argument("embedded acrobot state off the unit circle");
  const double m1 = c.link1_mass, m2 = c.link2_mass;
  const double l1 = c.link1_length, l2 = c.link2_length, g = c.gravity;
  const double s12 = s1 * c2 + c1 * s2;

  const double m11 = (m1 + m2) * l1 * l1 + m2 * l2 * l2 + 2.0 * m2 * l1 * l2 * c2;
  const double m12 = m2 * l2 * l2 + m2 * l1 * l2 * c2;
  const double m22 = m2 * l2 * l2;
  const double h = m2 * l1 * l2;

  const double g1 = (m1 + m2) * g * l1 * s1 + m2 * g * l2 * s12;
  const double g2 = m2 * g * l2 * s12;

  const double tau1 = -c.joint1_damping * w1 + h * s2 * (2.0 * w1 * w2 + w2 * w2) - g1;
  const double tau2 = u - c.joint2_damping * w2 - h * s2 * w1 * w1 - g2;

  const double det = m11 * m22 - m12 * m12;
  const double a1 = (m22 * tau1 - m12 * tau2) / det;
  const double a2 = (m11 * tau2 - m12 * tau1) / det;
  dx = {-s1 * w1, -s2 * w2, c1 * w1, c2 * w2, a1, a2};
}

inline double acrobot_truth_energy(const std::array<double, 6>& x, const SimConfig& c) {
  const double c1 = x[0], c2 = x[1], s1 = x[2], s2 = x[3], w1 = x[4], w2 = x[5];
  const double m1 = c.link1_mass, m2 = c.link2_mass;
  const double l1 = c.link1_length, l2 = c.link2_length, g = c.gravity;
  const double c12 = c1 * c2 - s1 * s2;
  const double kinetic = 0.5 * (m1 + m2) * l1 * l1 * w1 * w1 +
                         0.5 * m2 * l2 * l2 * (w1 + w2) * (w1 + w2) +
                         m2 * l1 * l2 * c2 * w1 * (w1 + w2);
  const double potential = -(m1 + m2) * g * l1 * c1 - m2 * g * l2 * c12;
  return kinetic + potential;
}

// ---- chart-coordinate integration ---------------------------------------------
// Ground truth is integrated in angle charts (q, qdot, ...) and the embedding
// is emitted afterwards, so every produced sample satisfies the unit-circle
// constraint to roundoff. The embedded RHS ops above stay available for
// direct (on-manifold) evaluation.

inline int chart_size(Task t) {
  switch (t) {
    case Task::PendulumPhase: return 2;   // (q, p)
    case Task::PendulumEmbedded: return 2;  // (q, qdot)
    case Task::CartPole: return 4;        // (r, phi, rdot, phidot)
    case Task::Acrobot: return 4;         // (phi1, phi2, w1, w2)
  }
  throw std::invalid_argument("bad task");
}

inline Tensor chart_rhs(Task task, const SimConfig& c, const Tensor& chart, const Tensor& u) {
  const auto& s = chart.values();
  const double uc = u.values()[0];
  switch (task) {
    case Task::PendulumPhase: {
      double dq, dp;
      pendulum_truth_rhs(s[0], s[1], uc, dq, dp);
      return vec({dq, dp});
    }
    case Task::PendulumEmbedded: {
      // qddot = 3 pdot with p = qdot / 3
      return vec({s[1], 3.0 * (-5.0 * std::sin(s[0]) - 0.1 * s[1] + uc)});
    }
    case Task::CartPole: {
      std::array<double, 5> dx;
      cartpole_truth_rhs({s[0], std::cos(s[1]), std::sin(s[1]), s[2], s[3]}, uc, c, dx);
      return vec({s[2], s[3], dx[3], dx[4]});
    }
    case Task::Acrobot: {
      std::array<double, 6> dx;
      acrobot_truth_rhs({std::cos(s[0]), std::cos(s[1]), std::sin(s[0]), std::sin(s[1]), s[2],
                         s[3]},
                        uc, c, dx);
      return vec({s[2], s[3], dx[4], dx[5]});
    }
  }
  throw std::invalid_argument("bad task");
}

inline std::vector<double> chart_to_state(Task task, const std::vector<double>& s) {
  switch (task) {
    case Task::PendulumPhase: return s;
    case Task::PendulumEmbedded: return {std::cos(s[0]), std::sin(s[0]), s[1]};
    case Task::CartPole: return {s[0], std::cos(s[1]), std::sin(s[1]), s[2], s[3]};
    case Task::Acrobot:
      return {std::cos(s[0]), std::cos(s[1]), std::sin(s[0]), std::sin(s[1]), s[2], s[3]};
  }
  throw std::invalid_argument("bad task");
}

inline std::vector<double> state_to_chart(Task task, const std::vector<double>& x) {
  switch (task) {
    case Task::PendulumPhase: return x;
    case Task::PendulumEmbedded: return {std::atan2(x[1], x[0]), x[2]};
    case Task::CartPole: return {x[0], std::atan2(x[2], x[1]), x[3], x[4]};
    case Task::Acrobot: return {std::atan2(x[2], x[0]), std::atan2(x[3], x[1]), x[4], x[5]};
  }
  throw std::invalid_argument("bad task");
}

// Integrator-converged truth rollout from one observed initial state; returns
// observed states on the t0 + i*h grid.
inline RolloutResult truth_rollout(Task task, const SimConfig& c, const Tensor& init, double u,
                                   int steps, int substeps) {
  auto rhs = [&](const Tensor& x, const Tensor& uu) { return chart_rhs(task, c, x, uu); };
  Tensor chart0(Shape{chart_size(task)}, state_to_chart(task, init.values()));
  RolloutResult chart = odesolve(rhs, AugmentedState{chart0, vec({u})}, c.h, steps, substeps);

  RolloutResult out;
  out.times = chart.times;
  out.state_size = task_info(task).state_size();
  for (int i = 0; i <= steps; ++i) {
    // index 0 carries the supplied initial state verbatim
    std::vector<double> obs =
        i == 0 ? init.values() : chart_to_state(task, chart.state_at(i).values());
    obs.push_back(u);
    out.augmented.push_back(Tensor(Shape{out.state_size + 1}, std::move(obs)));
  }
  return out;
}

// ---- datasets -----------------------------------------------------------------

struct Trajectory {
  int id = 0;
  std::vector<double> times;
  std::vector<std::vector<double>> states;  // one flat state per sample
  double u = 0.0;                           // constant control (scalar tasks)
};

struct Dataset {
  Task task = Task::PendulumPhase;
  std::string split;  // "train" or "test"
  int state_size = 0;
  int inputs = 1;
  double h = 0.05;
  std::uint64_t seed = 0;
  std::vector<Trajectory> trajectories;
};

inline Tensor sample_initial_state(Task task, Rng& rng) {
  switch (task) {
    case Task::PendulumPhase:
      return vec({rng.uniform(-M_PI, M_PI), rng.uniform(-1.0, 1.0)});
    case Task::PendulumEmbedded: {
      const double q = rng.uniform(-M_PI, M_PI);
      return vec({std::cos(q), std::sin(q), rng.uniform(-1.0, 1.0)});
    }
    case Task::CartPole: {
      const double r = rng.uniform(-1.0, 1.0);
      const double phi = rng.uniform(-1.0, 1.0);
      return vec({r, std::cos(phi), std::sin(phi), rng.uniform(-1.0, 1.0),
                  rng.uniform(-1.0, 1.0)});
    }
    case Task::Acrobot: {
      const double p1 = rng.uniform(-1.0, 1.0);
      const double p2 = rng.uniform(-1.0, 1.0);
      return vec({std::cos(p1), std::cos(p2), std::sin(p1), std::sin(p2),
                  rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)});
    }
  }
  throw std::invalid_argument("bad task");
}

// One split: every sampled initial condition crossed with every constant
// control in the configured set.
inline Dataset generate_split(Task task, const SimConfig& c, std::uint64_t seed,
                              const std::string& split, int n_inits) {
  Dataset ds;
  ds.task = task;
  ds.split = split;
  ds.state_size = task_info(task).state_size();
  ds.h = c.h;
  ds.seed = seed;
  Rng rng(splitmix64(seed ^ (split == "train" ? 0x747261696eULL : 0x74657374ULL)));
  int id = 0;
  for (int i = 0; i < n_inits; ++i) {
    Tensor init = sample_initial_state(task, rng);
    for (double u : c.control_set) {
      RolloutResult r = truth_rollout(task, c, init, u, c.samples - 1, c.truth_substeps);
      Trajectory t;
      t.id = id++;
      t.u = u;
      t.times = r.times;
      for (int s = 0; s < static_cast<int>(r.augmented.size()); ++s)
        t.states.push_back(r.state_at(s).values());
      ds.trajectories.push_back(std::move(t));
    }
  }
  return ds;
}

struct DatasetPair {
  Dataset train;
  Dataset test;
};

inline DatasetPair generate_dataset(Task task, const SimConfig& c, std::uint64_t seed) {
  return {generate_split(task, c, seed, "train", c.train_inits),
          generate_split(task, c, seed, "test", c.test_inits)};
}

// ---- dataset file format -------------------------------------------------------
// '#'-prefixed self-describing header, then one comma-separated row per
// (trajectory, step) with 17-significant-digit reals.

inline std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset: " + path);
  const TaskInfo info = task_info(ds.task);
  out << "# phlearn-dataset-v1\n";
  out << "# task " << static_cast<int>(ds.task) << "\n";
  out << "# name " << info.name << "\n";
  out << "# representation " << representation_name(info.rep) << "\n";
  out << "# trans_dof " << info.trans_dof << "\n";
  out << "# angle_dof " << info.angle_dof << "\n";
  out << "# state_size " << ds.state_size << "\n";
  out << "# inputs " << ds.inputs << "\n";
  out << "# h " << fmt17(ds.h) << "\n";
  out << "# seed " << ds.seed << "\n";
  out << "# split " << ds.split << "\n";
  out << "# trajectories " << ds.trajectories.size() << "\n";
  out << "trajectory,step,time";
  for (int i = 0; i < ds.state_size; ++i) out << ",s" << i;
  out << ",u\n";
  for (const auto& t : ds.trajectories) {
    for (std::size_t s = 0; s < t.states.size(); ++s) {
      out << t.id << ',' << s << ',' << fmt17(t.times[s]);
      for (double v : t.states[s]) out << ',' << fmt17(v);
      out << ',' << fmt17(t.u) << '\n';
    }
  }
}

inline Dataset read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read dataset: " + path);
  Dataset ds;
  std::map<std::string, std::string> header;
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("# ", 0) == 0) {
      std::istringstream ls(line.substr(2));
      std::string key;
      ls >> key;
      std::string rest;
      std::getline(ls, rest);
      if (!rest.empty() && rest[0] == ' ') rest.erase(0, 1);
      header[key] = rest;
      continue;
    }
    if (line.rfind("trajectory,", 0) == 0) break;  // column header
  }
  ds.task = parse_task(std::stoi(header.at("task")));
  ds.state_size = std::stoi(header.at("state_size"));
  ds.inputs = std::stoi(header.at("inputs"));
  ds.h = std::stod(header.at("h"));
  ds.seed = std::stoull(header.at("seed"));
  ds.split = header.at("split");

  std::map<int, Trajectory> by_id;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (static_cast<int>(cells.size()) != 3 + ds.state_size + 1)
      throw std::runtime_error("malformed dataset row in " + path);
    const int id = std::stoi(cells[0]);
    Trajectory& t = by_id[id];
    t.id = id;
    t.times.push_back(std::stod(cells[2]));
    std::vector<double> state(static_cast<std::size_t>(ds.state_size));
    for (int i = 0; i < ds.state_size; ++i) state[static_cast<std::size_t>(i)] =
        std::stod(cells[static_cast<std::size_t>(3 + i)]);
    t.states.push_back(std::move(state));
    t.u = std::stod(cells.back());
  }
  for (auto& [id, t] : by_id) ds.trajectories.push_back(std::move(t));
  return ds;
}

// Ground-truth functions of the pendulum tasks on a coordinate grid, used for
// recovery reports. The embedded variants are the same functions expressed in
// (cos q, sin q).
struct PendulumTruth {
  static double mass_inv(double) { return 3.0; }
  static double potential(double q) { return 5.0 * (1.0 - std::cos(q)); }
  static double input_gain(double) { return 1.0; }
  static double dissipation_pp(double) { return 0.1; }
};

}  // namespace phlearn
