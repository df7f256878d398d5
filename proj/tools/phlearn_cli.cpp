// Command-line driver: dataset generation, per-variant training, evaluation,
// full experiments, and plot-data emission, all driven by one JSON config.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "phlearn/config.hpp"
#include "phlearn/experiment.hpp"

namespace {

using namespace phlearn;

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  int task = 0;           // 0 = take from config
  std::uint64_t seed = 0;
  bool seed_set = false;
};

ExperimentConfig resolve_config(const CommonArgs& a) {
  ExperimentConfig cfg;
  if (!a.config_path.empty()) cfg = load_config(a.config_path);
  if (a.task != 0) {
    cfg.task = a.task;
    parse_task(cfg.task);
    cfg.variants = applicable_variants(parse_task(cfg.task));
  }
  if (a.seed_set) cfg.seed = a.seed;
  if (!a.out_dir.empty()) cfg.out_dir = a.out_dir;
  if (cfg.variants.empty()) cfg.variants = applicable_variants(parse_task(cfg.task));
  return cfg;
}

DatasetPair ensure_datasets(const ExperimentConfig& cfg, const ExperimentPaths& paths) {
  const std::string train_path = paths.train_file(cfg.task);
  const std::string test_path = paths.test_file(cfg.task);
  if (std::filesystem::exists(train_path) && std::filesystem::exists(test_path))
    return {read_dataset(train_path), read_dataset(test_path)};
  DatasetPair ds = generate_dataset(parse_task(cfg.task), cfg.sim, cfg.seed);
  paths.create();
  write_dataset(train_path, ds.train);
  write_dataset(test_path, ds.test);
  return ds;
}

int cmd_generate(const CommonArgs& a) {
  ExperimentConfig cfg = resolve_config(a);
  ExperimentPaths paths(cfg.out_dir);
  paths.create();
  DatasetPair ds = generate_dataset(parse_task(cfg.task), cfg.sim, cfg.seed);
  write_dataset(paths.train_file(cfg.task), ds.train);
  write_dataset(paths.test_file(cfg.task), ds.test);
  std::printf("wrote %s (%zu trajectories)\n", paths.train_file(cfg.task).c_str(),
              ds.train.trajectories.size());
  std::printf("wrote %s (%zu trajectories)\n", paths.test_file(cfg.task).c_str(),
              ds.test.trajectories.size());
  std::printf("digest %s\n",
              file_digest({paths.train_file(cfg.task), paths.test_file(cfg.task)}).c_str());
  return 0;
}

int cmd_train(const CommonArgs& a, const std::string& variant) {
  ExperimentConfig cfg = resolve_config(a);
  ExperimentPaths paths(cfg.out_dir);
  paths.create();
  DatasetPair ds = ensure_datasets(cfg, paths);
  VariantResult row = train_and_evaluate_variant(cfg, ds, variant, paths);
  if (!row.ok) {
    std::fprintf(stderr, "error: training: %s\n", row.error.c_str());
    return 1;
  }
  std::printf("%s: %ld parameters\n", row.variant.c_str(), row.params);
  std::printf("train error %.6g +- %.6g\n", row.train_err.mean, row.train_err.stddev);
  std::printf("test error  %.6g +- %.6g\n", row.test_err.mean, row.test_err.stddev);
  std::printf("pred error  %.6g +- %.6g\n", row.pred_err.mean, row.pred_err.stddev);
  if (row.beta.defined) std::printf("beta        %.6g\n", row.beta.beta);
  std::printf("checkpoint  %s\n", paths.checkpoint(cfg.task, variant).c_str());
  return 0;
}

int cmd_evaluate(const CommonArgs& a, const std::string& variant,
                 const std::string& checkpoint) {
  ExperimentConfig cfg = resolve_config(a);
  ExperimentPaths paths(cfg.out_dir);
  DatasetPair ds = ensure_datasets(cfg, paths);
  Model model(model_spec_for(cfg, variant));
  ParamRefs refs = model.params();
  load_checkpoint(checkpoint.empty() ? paths.checkpoint(cfg.task, variant) : checkpoint, refs);
  const Task task = parse_task(cfg.task);
  SplitError tr = evaluate(model, ds.train, EvalKind::Train, cfg.train.tau, task, cfg.sim,
                           cfg.train.substeps);
  SplitError te = evaluate(model, ds.test, EvalKind::Test, cfg.train.tau, task, cfg.sim,
                           cfg.train.substeps);
  SplitError pe = prediction_error(model, ds.train, task, cfg.sim, cfg.prediction_steps,
                                   cfg.train.substeps);
  std::printf("%s: %ld parameters\n", variant.c_str(), model.param_count());
  std::printf("train error %.6g +- %.6g\n", tr.mean, tr.stddev);
  std::printf("test error  %.6g +- %.6g\n", te.mean, te.stddev);
  std::printf("pred error  %.6g +- %.6g\n", pe.mean, pe.stddev);
  return 0;
}

int cmd_experiment(const CommonArgs& a) {
  ExperimentConfig cfg = resolve_config(a);
  ExperimentResult res = run_experiment(cfg);
  std::printf("experiment task %d -> %s\n", res.task, res.out_dir.c_str());
  std::printf("dataset %s\n", res.dataset_digest.c_str());
  for (const auto& r : res.rows) {
    if (r.ok)
      std::printf("  %-26s %8ld params  train %.4g  test %.4g  pred %.4g\n", r.variant.c_str(),
                  r.params, r.train_err.mean, r.test_err.mean, r.pred_err.mean);
    else
      std::printf("  %-26s FAILED: %s\n", r.variant.c_str(), r.error.c_str());
  }
  ExperimentPaths paths(cfg.out_dir);
  std::printf("table %s\n", paths.table_txt(cfg.task).c_str());
  return 0;
}

int cmd_plotdata(const CommonArgs& a, const std::string& variant,
                 const std::string& checkpoint) {
  ExperimentConfig cfg = resolve_config(a);
  ExperimentPaths paths(cfg.out_dir);
  paths.create();
  Model model(model_spec_for(cfg, variant));
  ParamRefs refs = model.params();
  load_checkpoint(checkpoint.empty() ? paths.checkpoint(cfg.task, variant) : checkpoint, refs);
  BetaEstimate beta;
  if (parse_task(cfg.task) == Task::PendulumEmbedded && model.mass_inv() != nullptr)
    beta = estimate_beta_mass_inv(model, cfg.grid_points);
  if (model.mass_inv() != nullptr) emit_learned_functions(cfg, model, variant, beta, paths);
  if (parse_task(cfg.task) == Task::PendulumPhase)
    emit_phase_portrait(cfg, model, variant, paths);
  std::printf("plot data written under %s\n", paths.plotdata.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"learning dissipative port-Hamiltonian dynamics from trajectories"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string variant = "dissipative-symoden";
  std::string checkpoint;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", args.config_path, "JSON config file");
    sub->add_option("--out", args.out_dir, "output directory");
    sub->add_option("--task", args.task, "task id 1..4");
    sub->add_option("--seed", args.seed, "seed override")->each([&](const std::string&) {
      args.seed_set = true;
    });
  };

  CLI::App* gen = app.add_subcommand("generate", "generate ground-truth datasets");
  add_common(gen);
  CLI::App* train_cmd = app.add_subcommand("train", "train one model variant");
  add_common(train_cmd);
  train_cmd->add_option("--variant", variant, "model variant");
  CLI::App* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint");
  add_common(eval_cmd);
  eval_cmd->add_option("--variant", variant, "model variant");
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file");
  CLI::App* exp = app.add_subcommand("experiment", "run every variant and emit the comparison");
  add_common(exp);
  CLI::App* plot = app.add_subcommand("plotdata", "emit plot data for a checkpoint");
  add_common(plot);
  plot->add_option("--variant", variant, "model variant");
  plot->add_option("--checkpoint", checkpoint, "checkpoint file");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate(args);
    if (train_cmd->parsed()) return cmd_train(args, variant);
    if (eval_cmd->parsed()) return cmd_evaluate(args, variant, checkpoint);
    if (exp->parsed()) return cmd_experiment(args);
    if (plot->parsed()) return cmd_plotdata(args, variant, checkpoint);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: config: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: runtime: %s\n", e.what());
    return 1;
  }
  return 0;
}
