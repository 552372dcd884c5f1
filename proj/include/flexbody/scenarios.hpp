#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flexbody/controller.hpp"
#include "flexbody/online.hpp"
#include "flexbody/trainer.hpp"

namespace flexbody {

struct DependencyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ScenarioSpec {
  std::string scenario;  // train-sim, fine-tune, pb-map, online-traj, control-eval, tool-switch
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir;
};

/// Full experiment configuration parsed from one JSON file. Relative
/// artifact paths resolve against the output directory, so chained
/// scenarios sharing an --out directory find each other's bundles.
struct ExperimentConfig {
  RobotModel robot;
  PerturbSpec perturb;
  NoiseSpec noise;
  CollectConfig collect;
  int samples_per_tool = 500;
  TrainConfig train_sim;
  TrainConfig fine_tune;
  OnlineConfig online;
  int online_ticks = 100;
  std::string online_true_tool = "Long/Middle";
  std::string online_start_tool = "Short/Middle";
  ControlConfig control;
  std::string control_eval_tool = "Long/Middle";
  int control_eval_targets = 5;
  int tool_switch_nmax = 5;
  int tool_switch_ticks_per_phase = 40;
  std::string tool_switch_start_pb = "Long/Light";
  std::vector<std::string> tool_switch_sequence = {"Long/Heavy", "Short/Heavy"};
  std::string sim_bundle_path = "sim_bundle.json";
  std::string finetuned_bundle_path = "finetuned_bundle.json";
  std::string pb_map_bundle_path = "sim_bundle.json";
  std::string online_bundle_path = "sim_bundle.json";
  std::string tool_switch_bundle_path = "sim_bundle.json";
};

ExperimentConfig load_experiment_config(const std::string& path);
std::uint64_t config_hash(const std::string& path);  // FNV-1a over the file bytes

/// Moving average with window 5, partial windows at the head.
std::vector<double> moving_average5(const std::vector<double>& x);

/// Executes the named protocol and writes CSV artifacts plus summary.json
/// into spec.out_dir.
void run_scenario(const ScenarioSpec& spec);

}  // namespace flexbody
