#pragma once

// Experiment configuration: one JSON file drives data generation, model
// architecture, training, and reporting. Every default that is a judgment
// call (widths, sampling interval, dataset sizes, optimizer constants) is
// surfaced as a key here.

#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "phlearn/models.hpp"
#include "phlearn/simlab.hpp"
#include "phlearn/trainer.hpp"

namespace phlearn {

struct ExperimentConfig {
  int task = 1;
  std::uint64_t seed = 42;
  std::string out_dir = "out";
  std::vector<std::string> variants;  // empty -> every variant valid for the task

  SimConfig sim;
  TrainConfig train;

  // architecture
  std::vector<int> hidden = {64, 64};
  std::vector<int> naive_hidden = {256, 256};
  std::vector<int> geometric_hidden = {128, 128};
  std::vector<int> unstructured_hidden = {128, 128};
  double mass_eps = 0.01;

  int grid_points = 101;
  int prediction_steps = 40;
};

inline std::vector<std::string> applicable_variants(Task task) {
  std::vector<std::string> v = {variant_name(Variant::NaiveBaseline)};
  if (task != Task::PendulumPhase) v.push_back(variant_name(Variant::GeometricBaseline));
  v.push_back(variant_name(Variant::UnstructuredDissipative));
  v.push_back(variant_name(Variant::Symoden));
  v.push_back(variant_name(Variant::DissipativeSymoden));
  return v;
}

inline ModelSpec model_spec_for(const ExperimentConfig& cfg, const std::string& variant) {
  const TaskInfo info = task_info(parse_task(cfg.task));
  ModelSpec spec;
  spec.variant = parse_variant(variant);
  spec.rep = info.rep;
  spec.trans_dof = info.trans_dof;
  spec.angle_dof = info.angle_dof;
  spec.inputs = info.inputs;
  spec.hidden = cfg.hidden;
  spec.naive_hidden = cfg.naive_hidden;
  spec.geometric_hidden = cfg.geometric_hidden;
  spec.unstructured_hidden = cfg.unstructured_hidden;
  spec.mass_eps = cfg.mass_eps;
  spec.validate();
  return spec;
}

namespace detail {

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                       const std::string& where) {
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key))
      throw std::invalid_argument("unknown config key '" + key + "' in " + where);
}

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  detail::check_keys(j,
                     {"task", "seed", "out", "variants", "data", "model", "train", "grid_points",
                      "prediction_steps"},
                     "top level");
  detail::read_key(j, "task", cfg.task);
  detail::read_key(j, "seed", cfg.seed);
  detail::read_key(j, "out", cfg.out_dir);
  detail::read_key(j, "variants", cfg.variants);
  detail::read_key(j, "grid_points", cfg.grid_points);
  detail::read_key(j, "prediction_steps", cfg.prediction_steps);

  if (j.contains("data")) {
    const auto& d = j.at("data");
    detail::check_keys(d,
                       {"h", "samples", "train_inits", "test_inits", "control_set",
                        "truth_substeps", "gravity", "cart_mass", "pole_mass", "pole_length",
                        "cart_damping", "pole_damping", "link1_mass", "link2_mass",
                        "link1_length", "link2_length", "joint1_damping", "joint2_damping"},
                       "data");
    detail::read_key(d, "h", cfg.sim.h);
    detail::read_key(d, "samples", cfg.sim.samples);
    detail::read_key(d, "train_inits", cfg.sim.train_inits);
    detail::read_key(d, "test_inits", cfg.sim.test_inits);
    detail::read_key(d, "control_set", cfg.sim.control_set);
    detail::read_key(d, "truth_substeps", cfg.sim.truth_substeps);
    detail::read_key(d, "gravity", cfg.sim.gravity);
    detail::read_key(d, "cart_mass", cfg.sim.cart_mass);
    detail::read_key(d, "pole_mass", cfg.sim.pole_mass);
    detail::read_key(d, "pole_length", cfg.sim.pole_length);
    detail::read_key(d, "cart_damping", cfg.sim.cart_damping);
    detail::read_key(d, "pole_damping", cfg.sim.pole_damping);
    detail::read_key(d, "link1_mass", cfg.sim.link1_mass);
    detail::read_key(d, "link2_mass", cfg.sim.link2_mass);
    detail::read_key(d, "link1_length", cfg.sim.link1_length);
    detail::read_key(d, "link2_length", cfg.sim.link2_length);
    detail::read_key(d, "joint1_damping", cfg.sim.joint1_damping);
    detail::read_key(d, "joint2_damping", cfg.sim.joint2_damping);
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    detail::check_keys(
        m, {"hidden", "naive_hidden", "geometric_hidden", "unstructured_hidden", "mass_eps"},
        "model");
    detail::read_key(m, "hidden", cfg.hidden);
    detail::read_key(m, "naive_hidden", cfg.naive_hidden);
    detail::read_key(m, "geometric_hidden", cfg.geometric_hidden);
    detail::read_key(m, "unstructured_hidden", cfg.unstructured_hidden);
    detail::read_key(m, "mass_eps", cfg.mass_eps);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::check_keys(t,
                       {"tau", "epochs", "learning_rate", "beta1", "beta2", "eps_opt",
                        "batch_size", "substeps", "threads", "seed"},
                       "train");
    detail::read_key(t, "tau", cfg.train.tau);
    detail::read_key(t, "epochs", cfg.train.epochs);
    detail::read_key(t, "learning_rate", cfg.train.learning_rate);
    detail::read_key(t, "beta1", cfg.train.beta1);
    detail::read_key(t, "beta2", cfg.train.beta2);
    detail::read_key(t, "eps_opt", cfg.train.eps_opt);
    detail::read_key(t, "batch_size", cfg.train.batch_size);
    detail::read_key(t, "substeps", cfg.train.substeps);
    detail::read_key(t, "threads", cfg.train.threads);
    detail::read_key(t, "seed", cfg.train.seed);
  }

  parse_task(cfg.task);  // range check
  if (cfg.variants.empty()) cfg.variants = applicable_variants(parse_task(cfg.task));
  for (const auto& v : cfg.variants) model_spec_for(cfg, v);  // validates combinations
  return cfg;
}

inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["task"] = cfg.task;
  j["seed"] = cfg.seed;
  j["out"] = cfg.out_dir;
  j["variants"] = cfg.variants;
  j["grid_points"] = cfg.grid_points;
  j["prediction_steps"] = cfg.prediction_steps;
  j["data"] = {{"h", cfg.sim.h},
               {"samples", cfg.sim.samples},
               {"train_inits", cfg.sim.train_inits},
               {"test_inits", cfg.sim.test_inits},
               {"control_set", cfg.sim.control_set},
               {"truth_substeps", cfg.sim.truth_substeps},
               {"gravity", cfg.sim.gravity},
               {"cart_mass", cfg.sim.cart_mass},
               {"pole_mass", cfg.sim.pole_mass},
               {"pole_length", cfg.sim.pole_length},
               {"cart_damping", cfg.sim.cart_damping},
               {"pole_damping", cfg.sim.pole_damping},
               {"link1_mass", cfg.sim.link1_mass},
               {"link2_mass", cfg.sim.link2_mass},
               {"link1_length", cfg.sim.link1_length},
               {"link2_length", cfg.sim.link2_length},
               {"joint1_damping", cfg.sim.joint1_damping},
               {"joint2_damping", cfg.sim.joint2_damping}};
  j["model"] = {{"hidden", cfg.hidden},
                {"naive_hidden", cfg.naive_hidden},
                {"geometric_hidden", cfg.geometric_hidden},
                {"unstructured_hidden", cfg.unstructured_hidden},
                {"mass_eps", cfg.mass_eps}};
  j["train"] = {{"tau", cfg.train.tau},
                {"epochs", cfg.train.epochs},
                {"learning_rate", cfg.train.learning_rate},
                {"beta1", cfg.train.beta1},
                {"beta2", cfg.train.beta2},
                {"eps_opt", cfg.train.eps_opt},
                {"batch_size", cfg.train.batch_size},
                {"substeps", cfg.train.substeps},
                {"threads", cfg.train.threads},
                {"seed", cfg.train.seed}};
  return j;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file: " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  return config_from_json(j);
}

}  // namespace phlearn
