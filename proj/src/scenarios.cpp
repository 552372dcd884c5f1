#include "flexbody/scenarios.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "flexbody/pca.hpp"

namespace flexbody {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read file: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::vector<std::string>& header) : out_(path) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
    for (size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
    out_ << "\n";
  }
  void row(const std::vector<std::string>& cells) {
    for (size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << "\n";
  }

 private:
  std::ofstream out_;
};

std::string sanitize(const std::string& label) {
  std::string s = label;
  for (char& c : s)
    if (c == '/') c = '-';
  return s;
}

void write_summary(const ScenarioSpec& spec, json extra) {
  extra["scenario"] = spec.scenario;
  extra["seed"] = spec.seed;
  extra["config_hash"] = hex64(config_hash(spec.config_path));
  std::ofstream f(fs::path(spec.out_dir) / "summary.json");
  f << extra.dump(2) << "\n";
}

ModelBundle require_bundle(const fs::path& out_dir, const std::string& rel,
                           const std::string& producing_scenario) {
  fs::path path = fs::path(rel).is_absolute() ? fs::path(rel) : out_dir / rel;
  if (!fs::exists(path))
    throw DependencyError("missing bundle " + path.string() + "; run the '" +
                          producing_scenario + "' scenario first");
  return load_bundle(path.string());
}

Vec4 random_stable_theta(const RobotModel& plant, const ToolState& tool, double margin_mm,
                         std::mt19937_64& rng, Vec4* theta_act_out = nullptr) {
  for (int attempt = 0; attempt < 100000; ++attempt) {
    Vec4 theta;
    for (size_t j = 0; j < plant.joints.size(); ++j) {
      std::uniform_real_distribution<double> u(plant.joints[j].range_min_deg,
                                               plant.joints[j].range_max_deg);
      theta[plant.theta_index[j]] = u(rng);
    }
    try {
      Vec4 theta_act = deflected_angles(plant, theta, tool);
      if (!inside_support_polygon(plant, center_of_gravity(plant, theta_act, tool), margin_mm))
        continue;
      Vec3 tip = forward_kinematics(plant, theta_act, tool);
      if (!project_to_screen(plant, theta_act, tip).visible) continue;
      if (theta_act_out) *theta_act_out = theta_act;
      return theta;
    } catch (const std::runtime_error&) {
    }
  }
  throw ConfigError("could not sample a stable visible pose");
}

// Plant response without the stability throw: clamped command -> deflected
// tip/cog plus an observation restricted to the given presence pattern.
struct PlantResponse {
  Vec3 tip;
  Vec2 cog;
  StateSample sample;
};

PlantResponse execute_on_plant(const RobotModel& plant, const Vec4& theta_cmd,
                               const ToolState& tool, const std::array<bool, 4>& pattern,
                               const NoiseSpec& noise, std::mt19937_64& rng) {
  Vec4 cmd = theta_cmd;
  for (size_t j = 0; j < plant.joints.size(); ++j) {
    double& v = cmd[plant.theta_index[j]];
    v = std::clamp(v, plant.joints[j].range_min_deg, plant.joints[j].range_max_deg);
  }
  Vec4 theta_act = deflected_angles(plant, cmd, tool);
  PlantResponse out;
  out.tip = forward_kinematics(plant, theta_act, tool);
  out.cog = center_of_gravity(plant, theta_act, tool);
  Projection proj = project_to_screen(plant, theta_act, out.tip);
  StateSample& s = out.sample;
  s.theta_deg = cmd;
  s.x_cog_mm = out.cog;
  s.x_tool_mm = out.tip;
  s.s_tool_px = proj.s_tool_px;
  s.tool_label = tool.label;
  s.present = {pattern[0], pattern[1], pattern[2] && proj.visible, pattern[3] && proj.visible};
  auto draw = [&](double sigma) {
    return sigma > 0.0 ? std::normal_distribution<double>(0.0, sigma)(rng) : 0.0;
  };
  for (int i = 0; i < 4; ++i) s.theta_deg[i] += draw(noise.theta_deg);
  for (int i = 0; i < 2; ++i) s.x_cog_mm[i] += draw(noise.cog_mm);
  for (int i = 0; i < 3; ++i) s.x_tool_mm[i] += draw(noise.tool_mm);
  for (int i = 0; i < 2; ++i) s.s_tool_px[i] += draw(noise.screen_px);
  return out;
}

void scenario_train(const ScenarioSpec& spec, const ExperimentConfig& cfg, bool fine_tune) {
  fs::path out_dir(spec.out_dir);
  RobotModel plant = fine_tune ? surrogate_real(cfg.robot, cfg.perturb) : cfg.robot;
  CollectConfig collect_cfg = cfg.collect;
  collect_cfg.policy =
      fine_tune ? CollectPolicy::kCuratedGrid : CollectPolicy::kRandomConstrained;
  collect_cfg.noise = cfg.noise;

  std::vector<ToolDataset> datasets;
  long total_samples = 0;
  int k = 0;
  for (const ToolState& tool : standard_tool_states()) {
    ToolDataset d = collect_dataset(plant, tool, cfg.samples_per_tool, collect_cfg,
                                    spec.seed * 1000 + k);
    total_samples += long(d.samples.size());
    std::string stage = fine_tune ? "real" : "sim";
    save_dataset(d, (out_dir / ("dataset_" + stage + "_" + sanitize(tool.label) + ".jsonl"))
                        .string());
    datasets.push_back(std::move(d));
    ++k;
  }

  TrainConfig train_cfg = fine_tune ? cfg.fine_tune : cfg.train_sim;
  train_cfg.seed = spec.seed;
  train_cfg.fine_tune = fine_tune;
  std::optional<ModelBundle> init;
  if (fine_tune)
    init = require_bundle(out_dir, cfg.sim_bundle_path, "train-sim");
  TrainResult result = train(datasets, train_cfg, init);

  std::string bundle_name = fine_tune ? cfg.finetuned_bundle_path : cfg.sim_bundle_path;
  save_bundle(result.bundle, (out_dir / bundle_name).string());
  CsvWriter loss_csv(out_dir / (spec.scenario + "_loss.csv"), {"epoch", "loss"});
  for (size_t e = 0; e < result.loss_history.size(); ++e)
    loss_csv.row({std::to_string(e), fmt(result.loss_history[e])});

  write_summary(spec, {{"bundle", bundle_name},
                       {"total_samples", total_samples},
                       {"epochs", train_cfg.epochs},
                       {"final_loss", result.loss_history.back()}});
}

void scenario_pb_map(const ScenarioSpec& spec, const ExperimentConfig& cfg) {
  fs::path out_dir(spec.out_dir);
  ModelBundle bundle = require_bundle(out_dir, cfg.pb_map_bundle_path, "train-sim");
  auto table = pb_table(bundle);
  CsvWriter pb_csv(out_dir / "pb_table.csv", {"label", "weight_g", "length_mm", "p0", "p1"});
  std::vector<Vec> points;
  for (const auto& [label, p] : table) {
    ToolState t = tool_state_by_label(label);
    pb_csv.row({label, fmt(t.weight_g), fmt(t.length_mm), fmt(p[0]), fmt(p[1])});
    points.push_back(Vec(p));
  }
  PcaResult pca = pca2(points);
  CsvWriter pca_csv(out_dir / "pb_pca.csv", {"label", "pc1", "pc2"});
  for (size_t i = 0; i < table.size(); ++i)
    pca_csv.row({table[i].first, fmt(pca.projected(i, 0)), fmt(pca.projected(i, 1))});
  write_summary(spec, {{"degenerate", pca.degenerate},
                       {"eigenvalues", {pca.eigenvalues[0], pca.eigenvalues[1]}}});
}

void scenario_online_traj(const ScenarioSpec& spec, const ExperimentConfig& cfg) {
  fs::path out_dir(spec.out_dir);
  ModelBundle bundle = require_bundle(out_dir, cfg.online_bundle_path, "train-sim");
  ToolState true_tool = tool_state_by_label(cfg.online_true_tool);
  Vec2 p_start = bundle.pb_for(cfg.online_start_tool);
  Vec2 p_true = bundle.pb_for(cfg.online_true_tool);

  json regime_summary;
  for (auto [regime, name] : {std::pair{SensorRegime::kA, "A"}, {SensorRegime::kB, "B"},
                              {SensorRegime::kC, "C"}}) {
    OnlineTrajectory traj =
        run_online(cfg.robot, true_tool, regime, cfg.online_ticks, spec.seed, bundle, p_start,
                   cfg.online, cfg.noise, cfg.collect.support_margin_mm);
    std::vector<std::string> header = {"tick", "p0", "p1", "buffer_size"};
    for (const std::string& label : bundle.pb_labels)
      header.push_back("dist_" + sanitize(label));
    CsvWriter csv(out_dir / (std::string("online_") + name + ".csv"), header);
    for (size_t t = 0; t < traj.pb.size(); ++t) {
      std::vector<std::string> row = {std::to_string(t), fmt(traj.pb[t][0]),
                                      fmt(traj.pb[t][1]), std::to_string(traj.buffer_size[t])};
      for (int r = 0; r < bundle.pb.rows(); ++r)
        row.push_back(fmt((traj.pb[t] - Vec2(bundle.pb.row(r).transpose())).norm()));
      csv.row(row);
    }
    regime_summary[name] = {{"initial_dist", (p_start - p_true).norm()},
                            {"final_dist", (traj.pb.back() - p_true).norm()}};
  }
  write_summary(spec, {{"true_tool", cfg.online_true_tool},
                       {"start_tool", cfg.online_start_tool},
                       {"regimes", regime_summary}});
}

void scenario_control_eval(const ScenarioSpec& spec, const ExperimentConfig& cfg) {
  fs::path out_dir(spec.out_dir);
  ModelBundle sim_bundle = require_bundle(out_dir, cfg.sim_bundle_path, "train-sim");
  ModelBundle fine_bundle = require_bundle(out_dir, cfg.finetuned_bundle_path, "fine-tune");
  RobotModel plant = surrogate_real(cfg.robot, cfg.perturb);
  RobotModel rigid = rigidified(cfg.robot);
  ToolState tool = tool_state_by_label(cfg.control_eval_tool);

  std::mt19937_64 rng(spec.seed);
  std::vector<Vec3> targets;
  for (int i = 0; i < cfg.control_eval_targets; ++i) {
    Vec4 theta_act;
    random_stable_theta(plant, tool, cfg.collect.support_margin_mm, rng, &theta_act);
    targets.push_back(forward_kinematics(plant, theta_act, tool));
  }

  NoiseSpec no_noise;
  no_noise.theta_deg = no_noise.cog_mm = no_noise.tool_mm = no_noise.screen_px = 0.0;
  std::array<bool, 4> pattern = {true, true, true, true};

  CsvWriter csv(out_dir / "control_eval.csv",
                {"target", "method", "ref_x", "ref_y", "ref_z", "realized_x", "realized_y",
                 "realized_z", "error_mm", "cog_error_mm"});
  json means;
  for (const std::string& method : {"geometric", "sim", "finetuned"}) {
    double sum = 0.0;
    for (size_t i = 0; i < targets.size(); ++i) {
      ControlTarget target;
      target.x_tool_ref_mm = targets[i];
      Vec4 theta_cmd;
      if (method == "geometric") {
        theta_cmd = geometric_ik(rigid, target, tool).theta_cmd_deg;
      } else {
        const ModelBundle& b = method == "sim" ? sim_bundle : fine_bundle;
        theta_cmd = solve(b, target, b.pb_for(tool.label), cfg.control, cfg.robot).theta_cmd_deg;
      }
      PlantResponse resp = execute_on_plant(plant, theta_cmd, tool, pattern, no_noise, rng);
      double err = (resp.tip - targets[i]).norm();
      sum += err;
      csv.row({std::to_string(i), method, fmt(targets[i][0]), fmt(targets[i][1]),
               fmt(targets[i][2]), fmt(resp.tip[0]), fmt(resp.tip[1]), fmt(resp.tip[2]),
               fmt(err), fmt(resp.cog.norm())});
    }
    means[method] = sum / double(targets.size());
  }
  write_summary(spec, {{"tool", cfg.control_eval_tool}, {"mean_error_mm", means}});
}

void scenario_tool_switch(const ScenarioSpec& spec, const ExperimentConfig& cfg) {
  fs::path out_dir(spec.out_dir);
  ModelBundle bundle = require_bundle(out_dir, cfg.tool_switch_bundle_path, "train-sim");
  const RobotModel& plant = cfg.robot;

  OnlineConfig online_cfg = cfg.online;
  online_cfg.n_max = cfg.tool_switch_nmax;
  OnlineBuffer buffer(online_cfg.n_max);
  Vec2 p = bundle.pb_for(cfg.tool_switch_start_pb);
  MomentumState mstate = make_momentum_state(kPbDim);
  std::mt19937_64 rng(spec.seed);
  std::array<bool, 4> pattern = regime_pattern(SensorRegime::kB);

  CsvWriter csv(out_dir / "tool_switch.csv",
                {"tick", "phase", "tool", "control_err_mm", "cog_err_mm", "control_err_ma5",
                 "cog_err_ma5", "p0", "p1", "buffer_size"});
  std::vector<double> control_err, cog_err;
  std::vector<int> phase_of_tick;
  int tick = 0;
  for (size_t phase = 0; phase < cfg.tool_switch_sequence.size(); ++phase) {
    ToolState tool = tool_state_by_label(cfg.tool_switch_sequence[phase]);
    for (int t = 0; t < cfg.tool_switch_ticks_per_phase; ++t, ++tick) {
      Vec4 theta_act;
      random_stable_theta(plant, tool, cfg.collect.support_margin_mm, rng, &theta_act);
      ControlTarget target;
      target.x_tool_ref_mm = forward_kinematics(plant, theta_act, tool);
      Vec4 theta_cmd = solve(bundle, target, p, cfg.control, plant).theta_cmd_deg;
      PlantResponse resp = execute_on_plant(plant, theta_cmd, tool, pattern, cfg.noise, rng);
      control_err.push_back((resp.tip - target.x_tool_ref_mm).norm());
      cog_err.push_back((resp.cog - target.x_cog_ref_mm).norm());
      phase_of_tick.push_back(int(phase));
      if (maybe_collect(buffer, resp.sample, bundle.masks, online_cfg))
        update_pb(buffer, bundle, p, mstate, online_cfg);
      std::vector<double> ma_c = moving_average5(control_err);
      std::vector<double> ma_g = moving_average5(cog_err);
      csv.row({std::to_string(tick), std::to_string(phase), tool.label,
               fmt(control_err.back()), fmt(cog_err.back()), fmt(ma_c.back()),
               fmt(ma_g.back()), fmt(p[0]), fmt(p[1]), std::to_string(buffer.size())});
    }
  }

  auto window_mean = [&](const std::vector<double>& v, int begin, int count) {
    double s = 0.0;
    for (int i = begin; i < begin + count; ++i) s += v[i];
    return s / double(count);
  };
  const int t1 = cfg.tool_switch_ticks_per_phase;
  json summary;
  summary["phase1_cog_err_at_swap"] = window_mean(cog_err, 0, 5);
  summary["phase1_cog_err_converged"] = window_mean(cog_err, t1 - 5, 5);
  summary["phase2_control_err_at_swap"] = window_mean(control_err, t1, 5);
  summary["phase2_control_err_converged"] =
      window_mean(control_err, int(control_err.size()) - 5, 5);
  write_summary(spec, summary);
}

}  // namespace

std::uint64_t config_hash(const std::string& path) {
  std::string bytes = read_file(path);
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::vector<double> moving_average5(const std::vector<double>& x) {
  std::vector<double> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    size_t begin = i + 1 >= 5 ? i + 1 - 5 : 0;
    double s = 0.0;
    for (size_t j = begin; j <= i; ++j) s += x[j];
    out[i] = s / double(i - begin + 1);
  }
  return out;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  json j = json::parse(read_file(path));
  ExperimentConfig cfg;
  cfg.robot = j.contains("robot") ? robot_model_from_json(j["robot"].dump())
                                  : default_robot_model();
  if (j.contains("perturb")) cfg.perturb = perturb_spec_from_json(j["perturb"].dump());
  if (j.contains("noise")) {
    const json& jn = j["noise"];
    cfg.noise.theta_deg = jn.value("theta_deg", cfg.noise.theta_deg);
    cfg.noise.cog_mm = jn.value("cog_mm", cfg.noise.cog_mm);
    cfg.noise.tool_mm = jn.value("tool_mm", cfg.noise.tool_mm);
    cfg.noise.screen_px = jn.value("screen_px", cfg.noise.screen_px);
  }
  if (j.contains("collect")) {
    const json& jc = j["collect"];
    cfg.samples_per_tool = jc.value("samples_per_tool", cfg.samples_per_tool);
    cfg.collect.support_margin_mm =
        jc.value("support_margin_mm", cfg.collect.support_margin_mm);
    cfg.collect.curated_grid_count =
        jc.value("curated_grid_count", cfg.collect.curated_grid_count);
    cfg.collect.curated_random_count =
        jc.value("curated_random_count", cfg.collect.curated_random_count);
  }
  auto read_train = [](const json& jt, TrainConfig& t) {
    t.epochs = jt.value("epochs", t.epochs);
    t.batch = jt.value("batch", t.batch);
    t.lr = jt.value("lr", t.lr);
    t.input_noise = jt.value("input_noise", t.input_noise);
  };
  if (j.contains("train")) read_train(j["train"], cfg.train_sim);
  cfg.fine_tune = cfg.train_sim;
  cfg.fine_tune.epochs = 500;
  if (j.contains("fine_tune")) {
    read_train(j["fine_tune"], cfg.fine_tune);
    cfg.sim_bundle_path = j["fine_tune"].value("sim_bundle", cfg.sim_bundle_path);
  }
  if (j.contains("online")) {
    const json& jo = j["online"];
    if (jo.contains("thresholds"))
      for (int i = 0; i < 4; ++i) cfg.online.thresholds[i] = jo["thresholds"].at(i);
    cfg.online.n_thre = jo.value("n_thre", cfg.online.n_thre);
    cfg.online.n_max = jo.value("n_max", cfg.online.n_max);
    cfg.online.epochs = jo.value("epochs", cfg.online.epochs);
    cfg.online.lr = jo.value("lr", cfg.online.lr);
    cfg.online_ticks = jo.value("ticks", cfg.online_ticks);
    cfg.online_true_tool = jo.value("true_tool", cfg.online_true_tool);
    cfg.online_start_tool = jo.value("start_tool", cfg.online_start_tool);
    cfg.online_bundle_path = jo.value("bundle", cfg.online_bundle_path);
  }
  if (j.contains("control")) {
    const json& jc = j["control"];
    cfg.control.alpha = jc.value("alpha", cfg.control.alpha);
    cfg.control.gamma_max = jc.value("gamma_max", cfg.control.gamma_max);
    cfg.control.batch = jc.value("batch", cfg.control.batch);
    cfg.control.epochs = jc.value("epochs", cfg.control.epochs);
    cfg.control.theta_weight = jc.value("theta_weight", cfg.control.theta_weight);
    cfg.control.screen_weight = jc.value("screen_weight", cfg.control.screen_weight);
    if (jc.contains("init_mask"))
      cfg.control.init_mask = ModalityMask::parse(jc["init_mask"].get<std::string>());
  }
  if (j.contains("control_eval")) {
    const json& jc = j["control_eval"];
    cfg.control_eval_tool = jc.value("tool", cfg.control_eval_tool);
    cfg.control_eval_targets = jc.value("num_targets", cfg.control_eval_targets);
    cfg.finetuned_bundle_path = jc.value("finetuned_bundle", cfg.finetuned_bundle_path);
  }
  if (j.contains("pb_map"))
    cfg.pb_map_bundle_path = j["pb_map"].value("bundle", cfg.pb_map_bundle_path);
  if (j.contains("tool_switch")) {
    const json& jt = j["tool_switch"];
    cfg.tool_switch_nmax = jt.value("n_max", cfg.tool_switch_nmax);
    cfg.tool_switch_ticks_per_phase =
        jt.value("ticks_per_phase", cfg.tool_switch_ticks_per_phase);
    cfg.tool_switch_start_pb = jt.value("start_pb", cfg.tool_switch_start_pb);
    if (jt.contains("tools"))
      cfg.tool_switch_sequence = jt["tools"].get<std::vector<std::string>>();
    cfg.tool_switch_bundle_path = jt.value("bundle", cfg.tool_switch_bundle_path);
  }
  return cfg;
}

void run_scenario(const ScenarioSpec& spec) {
  ExperimentConfig cfg = load_experiment_config(spec.config_path);
  fs::create_directories(spec.out_dir);
  if (spec.scenario == "train-sim")
    scenario_train(spec, cfg, false);
  else if (spec.scenario == "fine-tune")
    scenario_train(spec, cfg, true);
  else if (spec.scenario == "pb-map")
    scenario_pb_map(spec, cfg);
  else if (spec.scenario == "online-traj")
    scenario_online_traj(spec, cfg);
  else if (spec.scenario == "control-eval")
    scenario_control_eval(spec, cfg);
  else if (spec.scenario == "tool-switch")
    scenario_tool_switch(spec, cfg);
  else
    throw ConfigError("unknown scenario: " + spec.scenario);
}

}  // namespace flexbody
