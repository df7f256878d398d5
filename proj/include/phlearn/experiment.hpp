#pragma once

// Experiment orchestration: datasets -> per-variant training -> metrics ->
// comparison table and plot-ready artifacts. Per-variant failures are
// isolated; the table row records the error and the other variants proceed.
//
// Output tree under the configured directory:
//   data/         dataset files (shared by every variant)
//   checkpoints/  parameter checkpoints
//   reports/      per-variant history + metrics, comparison table (csv, txt)
//   plotdata/     learned-function and phase-portrait data with SVG renderings

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "phlearn/config.hpp"
#include "phlearn/models.hpp"
#include "phlearn/simlab.hpp"
#include "phlearn/svg.hpp"
#include "phlearn/trainer.hpp"

namespace phlearn {

inline std::uint64_t fnv1a64(const std::string& bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string file_digest(const std::vector<std::string>& paths) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : paths) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot digest missing file: " + p);
    std::ostringstream ss;
    ss << in.rdbuf();
    h = fnv1a64(ss.str(), h);
  }
  char buf[24];
  std::snprintf(buf, sizeof(buf), "fnv1a:%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct VariantResult {
  std::string variant;
  bool ok = false;
  std::string error;
  long params = 0;
  SplitError train_err, test_err, pred_err;
  double wall_seconds = 0.0;
  BetaEstimate beta;
};

struct ExperimentResult {
  int task = 1;
  std::string out_dir;
  std::string dataset_digest;
  std::vector<VariantResult> rows;
};

namespace detail {

inline std::string task_tag(int task) { return "task" + std::to_string(task); }

inline std::uint64_t variant_seed(std::uint64_t base, const std::string& variant) {
  return splitmix64(base ^ fnv1a64(variant));
}

inline std::string mean_std_cell(const SplitError& e) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4g +- %.4g", e.mean, e.stddev);
  return buf;
}

}  // namespace detail

inline Model build_model(const ExperimentConfig& cfg, const std::string& variant) {
  Model model(model_spec_for(cfg, variant));
  Rng rng(detail::variant_seed(cfg.seed, variant));
  model.init(rng);
  return model;
}

// ---- artifact paths ---------------------------------------------------------

struct ExperimentPaths {
  std::filesystem::path root, data, checkpoints, reports, plotdata;

  explicit ExperimentPaths(const std::string& out_dir) : root(out_dir) {
    data = root / "data";
    checkpoints = root / "checkpoints";
    reports = root / "reports";
    plotdata = root / "plotdata";
  }
  void create() const {
    for (const auto& p : {root, data, checkpoints, reports, plotdata})
      std::filesystem::create_directories(p);
  }
  std::string train_file(int task) const {
    return (data / (detail::task_tag(task) + "-train.csv")).string();
  }
  std::string test_file(int task) const {
    return (data / (detail::task_tag(task) + "-test.csv")).string();
  }
  std::string checkpoint(int task, const std::string& v) const {
    return (checkpoints / (detail::task_tag(task) + "-" + v + ".json")).string();
  }
  std::string history(int task, const std::string& v) const {
    return (reports / (detail::task_tag(task) + "-" + v + "-history.csv")).string();
  }
  std::string metrics(int task, const std::string& v) const {
    return (reports / (detail::task_tag(task) + "-" + v + "-metrics.json")).string();
  }
  std::string table_csv(int task) const {
    return (reports / (detail::task_tag(task) + "-comparison.csv")).string();
  }
  std::string table_txt(int task) const {
    return (reports / (detail::task_tag(task) + "-comparison.txt")).string();
  }
};

// ---- plot-data emission ------------------------------------------------------

// Coordinate columns for a 1-D sweep: phase tasks sweep q directly, embedded
// and hybrid tasks sweep the first angle with every other coordinate at its
// rest value.
inline Tensor sweep_coords(const TaskInfo& info, const std::vector<double>& grid) {
  const int n = info.trans_dof, m = info.angle_dof;
  const int ci = info.coord_size();
  const int N = static_cast<int>(grid.size());
  std::vector<double> vals(static_cast<std::size_t>(ci) * N);
  for (int j = 0; j < N; ++j) {
    const double q = grid[static_cast<std::size_t>(j)];
    if (info.rep == Representation::Phase) {
      vals[static_cast<std::size_t>(j)] = q;  // n == 1 for the pendulum task
    } else {
      // translations at zero (rows [0, n)), then cos block, then sin block
      for (int a = 0; a < m; ++a) {
        vals[static_cast<std::size_t>(n + a) * N + j] = a == 0 ? std::cos(q) : 1.0;
        vals[static_cast<std::size_t>(n + m + a) * N + j] = a == 0 ? std::sin(q) : 0.0;
      }
    }
  }
  return Tensor(Shape{ci, N}, std::move(vals));
}

// Learned-function columns over a uniform grid, with ground-truth overlays for
// the pendulum tasks and beta-scaled columns for the embedded pendulum.
inline void emit_learned_functions(const ExperimentConfig& cfg, const Model& model,
                                   const std::string& variant, const BetaEstimate& beta,
                                   const ExperimentPaths& paths) {
  const Task task = parse_task(cfg.task);
  const TaskInfo info = task_info(task);
  const int d = info.trans_dof + info.angle_dof;
  const int N = cfg.grid_points;
  std::vector<double> grid(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) grid[static_cast<std::size_t>(i)] = -M_PI + 2.0 * M_PI * i / (N - 1);

  AttachedModel am = model.attach(nullptr);
  Tensor coords = sweep_coords(info, grid);
  Tensor minv = am.mass_inv_entries(coords);
  Tensor v = am.potential_row(coords);
  Tensor g = am.input_gain_entries(coords);
  const bool has_d = model.dissipation() != nullptr;
  Tensor dmat = has_d ? am.dissipation_entries(coords) : zeros(Shape{4 * d * d, N});

  const bool pendulum = task == Task::PendulumPhase || task == Task::PendulumEmbedded;
  const bool scaled = task == Task::PendulumEmbedded && beta.defined;

  const std::string base =
      (paths.plotdata / (detail::task_tag(cfg.task) + "-" + variant + "-functions")).string();
  std::ofstream out(base + ".csv");
  out << "q";
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) out << ",m_inv_" << i << j;
  out << ",v";
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < info.inputs; ++j) out << ",g_" << i << j;
  for (int i = 0; i < 2 * d; ++i)
    for (int j = 0; j < 2 * d; ++j) out << ",d_" << i << j;
  if (pendulum) out << ",truth_m_inv,truth_v,truth_g,truth_d_pp";
  if (scaled) out << ",beta,scaled_m_inv,scaled_v,scaled_g,scaled_d_pp";
  out << "\n";

  for (int k = 0; k < N; ++k) {
    const double q = grid[static_cast<std::size_t>(k)];
    out << fmt17(q);
    for (int e = 0; e < d * d; ++e) out << ',' << fmt17(minv.at(e, k));
    out << ',' << fmt17(v.at(0, k));
    for (int e = 0; e < d * info.inputs; ++e) out << ',' << fmt17(g.at(e, k));
    for (int e = 0; e < 4 * d * d; ++e) out << ',' << fmt17(has_d ? dmat.at(e, k) : 0.0);
    if (pendulum)
      out << ',' << fmt17(PendulumTruth::mass_inv(q)) << ',' << fmt17(PendulumTruth::potential(q))
          << ',' << fmt17(PendulumTruth::input_gain(q)) << ','
          << fmt17(PendulumTruth::dissipation_pp(q));
    if (scaled) {
      // the scaling degeneracy: beta*m_inv matches truth; v, g, d divide by it
      out << ',' << fmt17(beta.beta) << ',' << fmt17(beta.beta * minv.at(0, k)) << ','
          << fmt17(v.at(0, k) / beta.beta) << ',' << fmt17(g.at(0, k) / beta.beta) << ','
          << fmt17(has_d ? dmat.at(3, k) / beta.beta : 0.0);
    }
    out << "\n";
  }
  out.close();

  if (pendulum) {
    // one rendering per learned/truth curve pair
    struct Curve {
      const char* name;
      std::vector<double> learned, truth;
    };
    std::vector<Curve> curves(4);
    curves[0].name = "m_inv";
    curves[1].name = "v";
    curves[2].name = "g";
    curves[3].name = "d_pp";
    std::vector<double> vshift;
    double shift = 0.0;
    if (scaled || task == Task::PendulumPhase) {
      // remove the unidentifiable additive constant from the potential
      double acc = 0.0;
      for (int k = 0; k < N; ++k) {
        const double lv = scaled ? v.at(0, k) / beta.beta : v.at(0, k);
        acc += lv - PendulumTruth::potential(grid[static_cast<std::size_t>(k)]);
      }
      shift = acc / N;
    }
    for (int k = 0; k < N; ++k) {
      const double q = grid[static_cast<std::size_t>(k)];
      const double b = scaled ? beta.beta : 1.0;
      curves[0].learned.push_back(scaled ? b * minv.at(0, k) : minv.at(0, k));
      curves[1].learned.push_back((scaled ? v.at(0, k) / b : v.at(0, k)) - shift);
      curves[2].learned.push_back(scaled ? g.at(0, k) / b : g.at(0, k));
      curves[3].learned.push_back(has_d ? (scaled ? dmat.at(3, k) / b : dmat.at(3, k)) : 0.0);
      curves[0].truth.push_back(PendulumTruth::mass_inv(q));
      curves[1].truth.push_back(PendulumTruth::potential(q));
      curves[2].truth.push_back(PendulumTruth::input_gain(q));
      curves[3].truth.push_back(PendulumTruth::dissipation_pp(q));
    }
    for (const auto& c : curves) {
      SvgPlot plot(std::string(c.name) + " (" + variant + ")", "q", c.name);
      plot.add_series("learned", "#cc2222", grid, c.learned);
      plot.add_series("truth", "#000000", grid, c.truth);
      plot.save(base + "-" + c.name + ".svg");
    }
  }
}

// Vector field on a (q, p) grid plus one learned-vs-truth trajectory from a
// shared initial condition; pendulum phase task only.
inline void emit_phase_portrait(const ExperimentConfig& cfg, const Model& model,
                                const std::string& variant, const ExperimentPaths& paths) {
  const Task task = parse_task(cfg.task);
  if (task != Task::PendulumPhase)
    throw std::invalid_argument("phase portrait requires the phase-space pendulum task");
  AttachedModel am = model.attach(nullptr);
  auto rhs = [&](const Tensor& x, const Tensor& u) { return am.rhs(x, u); };

  const std::string base =
      (paths.plotdata / (detail::task_tag(cfg.task) + "-" + variant + "-portrait")).string();

  // 13 x 9 grid covers q in [-pi, pi], p in [-2, 2]
  std::ofstream field(base + "-field.csv");
  field << "q,p,dq,dp,truth_dq,truth_dp\n";
  SvgPlot plot("vector field and rollout (" + variant + ")", "q", "p");
  for (int i = 0; i < 13; ++i) {
    for (int j = 0; j < 9; ++j) {
      const double q = -M_PI + 2.0 * M_PI * i / 12.0;
      const double p = -2.0 + 4.0 * j / 8.0;
      Tensor d = am.rhs(vec({q, p}), vec({0.0}));
      double tdq, tdp;
      pendulum_truth_rhs(q, p, 0.0, tdq, tdp);
      field << fmt17(q) << ',' << fmt17(p) << ',' << fmt17(d.at(0)) << ',' << fmt17(d.at(1))
            << ',' << fmt17(tdq) << ',' << fmt17(tdp) << "\n";
      const double norm = std::sqrt(d.at(0) * d.at(0) + d.at(1) * d.at(1));
      const double s = norm > 1e-12 ? 0.5 / std::max(1.0, norm) : 0.0;
      plot.add_arrow(q, p, s * d.at(0), s * d.at(1));
    }
  }
  field.close();

  // shared initial condition for learned and truth rollouts
  const Tensor init = vec({2.0, 0.0});
  const int steps = 80;
  RolloutResult truth = truth_rollout(task, cfg.sim, init, 0.0, steps, cfg.sim.truth_substeps);
  std::vector<double> lq, lp, tq, tp;
  bool learned_ok = true;
  try {
    RolloutResult learned = odesolve(rhs, AugmentedState{init, vec({0.0})}, cfg.sim.h, steps);
    for (int s = 0; s <= steps; ++s) {
      lq.push_back(learned.state_at(s).at(0));
      lp.push_back(learned.state_at(s).at(1));
    }
  } catch (const IntegrationError&) {
    learned_ok = false;
  }
  for (int s = 0; s <= steps; ++s) {
    tq.push_back(truth.state_at(s).at(0));
    tp.push_back(truth.state_at(s).at(1));
  }

  std::ofstream traj(base + "-trajectory.csv");
  traj << "t,learned_q,learned_p,truth_q,truth_p\n";
  for (int s = 0; s <= steps; ++s) {
    traj << fmt17(truth.times[static_cast<std::size_t>(s)]);
    if (learned_ok)
      traj << ',' << fmt17(lq[static_cast<std::size_t>(s)]) << ','
           << fmt17(lp[static_cast<std::size_t>(s)]);
    else
      traj << ",nan,nan";
    traj << ',' << fmt17(tq[static_cast<std::size_t>(s)]) << ','
         << fmt17(tp[static_cast<std::size_t>(s)]) << "\n";
  }
  traj.close();

  if (learned_ok) plot.add_series("learned", "#cc2222", lq, lp);
  plot.add_series("truth", "#000000", tq, tp);
  plot.save(base + ".svg");
}

// ---- per-variant training -----------------------------------------------------

inline VariantResult train_and_evaluate_variant(const ExperimentConfig& cfg,
                                                const DatasetPair& ds,
                                                const std::string& variant,
                                                const ExperimentPaths& paths) {
  VariantResult row;
  row.variant = variant;
  const Task task = parse_task(cfg.task);
  try {
    Model model = build_model(cfg, variant);
    row.params = model.param_count();

    TrainConfig tc = cfg.train;
    tc.seed = detail::variant_seed(cfg.seed, variant);
    TrainResult tr = train(model, tc, ds.train, &ds.test);
    row.wall_seconds = tr.metrics.wall_seconds;

    std::ofstream hist(paths.history(cfg.task, variant));
    hist << "epoch,train_loss,test_loss\n";
    for (const auto& e : tr.history)
      hist << e.epoch << ',' << fmt17(e.train_loss) << ',' << fmt17(e.test_loss) << "\n";
    hist.close();

    row.train_err = evaluate(model, ds.train, EvalKind::Train, tc.tau, task, cfg.sim, tc.substeps);
    row.test_err = evaluate(model, ds.test, EvalKind::Test, tc.tau, task, cfg.sim, tc.substeps);
    row.pred_err = prediction_error(model, ds.train, task, cfg.sim, cfg.prediction_steps,
                                    tc.substeps);

    ParamRefs refs = model.params();
    save_checkpoint(paths.checkpoint(cfg.task, variant), refs);

    if (task == Task::PendulumEmbedded && model.mass_inv() != nullptr)
      row.beta = estimate_beta_mass_inv(model, cfg.grid_points);

    nlohmann::json mj;
    mj["variant"] = variant;
    mj["param_count"] = row.params;
    mj["train_error"] = {{"mean", row.train_err.mean}, {"std", row.train_err.stddev}};
    mj["test_error"] = {{"mean", row.test_err.mean}, {"std", row.test_err.stddev}};
    mj["prediction_error"] = {{"mean", row.pred_err.mean}, {"std", row.pred_err.stddev}};
    mj["normalization"] = tr.metrics.normalization;
    mj["wall_seconds"] = row.wall_seconds;  // timing only; not a determinism artifact
    if (row.beta.defined) mj["beta"] = row.beta.beta;
    std::ofstream mout(paths.metrics(cfg.task, variant));
    mout << mj.dump(1) << "\n";

    if (model.mass_inv() != nullptr)
      emit_learned_functions(cfg, model, variant, row.beta, paths);
    if (task == Task::PendulumPhase) emit_phase_portrait(cfg, model, variant, paths);

    row.ok = true;
  } catch (const std::exception& e) {
    row.ok = false;
    row.error = e.what();
  }
  return row;
}

// ---- comparison table -----------------------------------------------------------

inline void write_comparison_tables(const ExperimentResult& res, const ExperimentPaths& paths) {
  std::ofstream csv(paths.table_csv(res.task));
  csv << "variant,parameters,train_mean,train_std,test_mean,test_std,pred_mean,pred_std,status\n";
  for (const auto& r : res.rows) {
    csv << r.variant << ',' << r.params << ',';
    if (r.ok)
      csv << fmt17(r.train_err.mean) << ',' << fmt17(r.train_err.stddev) << ','
          << fmt17(r.test_err.mean) << ',' << fmt17(r.test_err.stddev) << ','
          << fmt17(r.pred_err.mean) << ',' << fmt17(r.pred_err.stddev) << ",ok";
    else
      csv << ",,,,,,failed: " << r.error;
    csv << "\n";
  }
  csv << "# dataset_digest " << res.dataset_digest << "\n";
  csv.close();

  std::ofstream txt(paths.table_txt(res.task));
  txt << std::left << std::setw(26) << "variant" << std::setw(12) << "#params" << std::setw(24)
      << "train error" << std::setw(24) << "test error" << std::setw(24) << "pred error"
      << "\n";
  txt << std::string(108, '-') << "\n";
  for (const auto& r : res.rows) {
    txt << std::left << std::setw(26) << r.variant << std::setw(12) << r.params;
    if (r.ok)
      txt << std::setw(24) << detail::mean_std_cell(r.train_err) << std::setw(24)
          << detail::mean_std_cell(r.test_err) << std::setw(24)
          << detail::mean_std_cell(r.pred_err);
    else
      txt << "failed: " << r.error;
    txt << "\n";
  }
  txt << std::string(108, '-') << "\n";
  txt << "dataset " << res.dataset_digest << "\n";
}

// ---- the full pipeline -----------------------------------------------------------

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  ExperimentResult res;
  res.task = cfg.task;
  res.out_dir = cfg.out_dir;
  const Task task = parse_task(cfg.task);

  ExperimentPaths paths(cfg.out_dir);
  paths.create();

  {
    std::ofstream cout_snap((paths.root / "config.json").string());
    cout_snap << config_to_json(cfg).dump(1) << "\n";
  }

  DatasetPair ds = generate_dataset(task, cfg.sim, cfg.seed);
  write_dataset(paths.train_file(cfg.task), ds.train);
  write_dataset(paths.test_file(cfg.task), ds.test);
  res.dataset_digest = file_digest({paths.train_file(cfg.task), paths.test_file(cfg.task)});

  for (const auto& variant : cfg.variants)
    res.rows.push_back(train_and_evaluate_variant(cfg, ds, variant, paths));

  write_comparison_tables(res, paths);
  return res;
}

}  // namespace phlearn
