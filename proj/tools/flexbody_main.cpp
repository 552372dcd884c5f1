#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "flexbody/scenarios.hpp"

int main(int argc, char** argv) {
  CLI::App app{"flexbody: whole-body tool-use experiments on a low-rigidity humanoid simulator"};
  app.require_subcommand(1);

  flexbody::ScenarioSpec spec;
  for (const std::string& name :
       {"train-sim", "fine-tune", "pb-map", "online-traj", "control-eval", "tool-switch"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", spec.config_path, "experiment config JSON")->required();
    sub->add_option("--seed", spec.seed, "random seed")->default_val(0);
    sub->add_option("--out", spec.out_dir, "output directory")->required();
    sub->callback([&spec, name] { spec.scenario = name; });
  }

  CLI11_PARSE(app, argc, argv);

  try {
    flexbody::run_scenario(spec);
  } catch (const std::exception& e) {
    nlohmann::json err;
    err["error"] = e.what();
    err["scenario"] = spec.scenario;
    std::cerr << err.dump() << std::endl;
    return 1;
  }
  return 0;
}
