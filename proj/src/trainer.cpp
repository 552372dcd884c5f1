#include "flexbody/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

namespace flexbody {

namespace {

Vec linspace(double lo, double hi, int n) {
  Vec v(n);
  for (int i = 0; i < n; ++i) v[i] = n == 1 ? lo : lo + (hi - lo) * double(i) / double(n - 1);
  return v;
}

struct PoseCheck {
  bool ok = false;
  Vec4 theta_act;
};

PoseCheck check_pose(const RobotModel& model, const Vec4& theta_cmd, const ToolState& tool,
                     double margin_mm) {
  PoseCheck out;
  Vec4 theta_act;
  try {
    theta_act = deflected_angles(model, theta_cmd, tool);
  } catch (const std::runtime_error&) {
    return out;
  }
  Vec2 cog = center_of_gravity(model, theta_act, tool);
  if (!inside_support_polygon(model, cog, margin_mm)) return out;
  Vec3 tip = forward_kinematics(model, theta_act, tool);
  if (!project_to_screen(model, theta_act, tip).visible) return out;
  out.ok = true;
  out.theta_act = theta_act;
  return out;
}

Vec4 random_theta(const RobotModel& model, std::mt19937_64& rng) {
  Vec4 theta;
  for (size_t j = 0; j < model.joints.size(); ++j) {
    std::uniform_real_distribution<double> u(model.joints[j].range_min_deg,
                                             model.joints[j].range_max_deg);
    theta[model.theta_index[j]] = u(rng);
  }
  return theta;
}

}  // namespace

ToolDataset collect_dataset(const RobotModel& model, const ToolState& tool, int n,
                            const CollectConfig& cfg, std::uint64_t seed) {
  ToolDataset out;
  out.tool = tool;
  if (n == 0) return out;
  std::mt19937_64 rng(seed);

  auto accept_random = [&](int want) {
    long attempts = 0, accepted = 0;
    while (accepted < want) {
      ++attempts;
      if (attempts >= 1000 && double(accepted) / double(attempts) < 0.01)
        throw ConfigError("pose acceptance rate below 1%; check joint ranges, support "
                          "polygon, and camera configuration");
      Vec4 theta = random_theta(model, rng);
      if (!check_pose(model, theta, tool, cfg.support_margin_mm).ok) continue;
      out.samples.push_back(observe(model, theta, tool, cfg.noise, rng));
      ++accepted;
    }
  };

  if (cfg.policy == CollectPolicy::kRandomConstrained) {
    accept_random(n);
    return out;
  }

  // Curated grid: deterministic pose sweep standing in for GUI teaching.
  const JointSpec& sp = model.joints[1];
  const JointSpec& sy = model.joints[2];
  const JointSpec& ep = model.joints[3];
  const JointSpec& ap = model.joints[0];
  Vec sp_grid = linspace(sp.range_min_deg, sp.range_max_deg, 14);
  Vec sy_grid = linspace(sy.range_min_deg, sy.range_max_deg, 5);
  Vec ep_grid = linspace(ep.range_min_deg, ep.range_max_deg, 7);
  Vec ap_grid = linspace(ap.range_min_deg, ap.range_max_deg, 5);
  std::vector<Vec4> feasible;
  for (int a = 0; a < sp_grid.size(); ++a)
    for (int b = 0; b < sy_grid.size(); ++b)
      for (int c = 0; c < ep_grid.size(); ++c)
        for (int d = 0; d < ap_grid.size(); ++d) {
          Vec4 theta(sp_grid[a], sy_grid[b], ep_grid[c], ap_grid[d]);
          if (check_pose(model, theta, tool, cfg.support_margin_mm).ok)
            feasible.push_back(theta);
        }
  // Subsample the feasible grid evenly so a small count still spans the
  // whole workspace instead of one corner of the sweep.
  const long m = long(feasible.size());
  const long want = std::min<long>(cfg.curated_grid_count, m);
  for (long i = 0; i < want; ++i) {
    long idx = want == 1 ? 0 : i * (m - 1) / (want - 1);
    out.samples.push_back(observe(model, feasible[size_t(idx)], tool, cfg.noise, rng));
  }
  accept_random(cfg.curated_random_count);
  return out;
}

TrainResult train(const std::vector<ToolDataset>& datasets, const TrainConfig& cfg,
                  const std::optional<ModelBundle>& init) {
  if (datasets.empty()) throw std::invalid_argument("train: need at least one dataset");
  if (cfg.fine_tune && !init) throw std::invalid_argument("train: fine-tune requires init bundle");

  std::mt19937_64 rng(cfg.seed);
  ModelBundle bundle = init ? *init : make_bundle(rng());
  const int k_tools = int(datasets.size());

  // Fine-tune keeps W and the frozen sim-stage normalizer; PBs restart at 0.
  if (cfg.fine_tune || !init) {
    bundle.pb_labels.clear();
    for (const ToolDataset& d : datasets) bundle.pb_labels.push_back(d.tool.label);
    bundle.pb = Mat::Zero(k_tools, kPbDim);
  }

  long total = 0;
  for (const ToolDataset& d : datasets) total += long(d.samples.size());
  if (total < 2) throw std::invalid_argument("train: need at least two samples");

  Mat x_raw(kStateDim, total);
  std::vector<int> sample_tool(total);
  {
    long col = 0;
    for (int k = 0; k < k_tools; ++k)
      for (const StateSample& s : datasets[k].samples) {
        x_raw.col(col) = s.to_vector();
        sample_tool[col] = k;
        ++col;
      }
  }
  if (!cfg.fine_tune) bundle.normalizer = Normalizer::fit(x_raw);

  Mat x_norm(kStateDim, total);
  for (long i = 0; i < total; ++i) x_norm.col(i) = bundle.normalizer.normalize(x_raw.col(i));

  AdamState w_state = make_adam_state(bundle.stack);
  AdamMatState pb_state = make_adam_mat_state(bundle.pb);
  std::uniform_int_distribution<size_t> mask_draw(0, bundle.masks.size() - 1);

  std::vector<long> order(total);
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (long start = 0; start < total; start += cfg.batch) {
      const int b = int(std::min<long>(cfg.batch, total - start));
      Mat input(kInputDim, b);
      Mat target(kStateDim, b);
      std::vector<int> batch_tool(b);
      for (int c = 0; c < b; ++c) {
        long i = order[start + c];
        const ModalityMask& m = bundle.masks[mask_draw(rng)];
        Vec xn = x_norm.col(i);
        if (cfg.input_noise > 0.0) {
          std::normal_distribution<double> g(0.0, cfg.input_noise);
          for (int r = 0; r < kStateDim; ++r) xn[r] += g(rng);
        }
        for (int mod = 0; mod < kNumModalities; ++mod)
          if (!m.bits[mod]) xn.segment(kBlockOffset[mod], kBlockSize[mod]).setZero();
        input.col(c).head(kStateDim) = xn;
        for (int mod = 0; mod < kMaskDim; ++mod)
          input(kStateDim + mod, c) = m.bits[mod] ? 1.0 : 0.0;
        input.col(c).tail(kPbDim) = bundle.pb.row(sample_tool[i]).transpose();
        target.col(c) = x_norm.col(i);
        batch_tool[c] = sample_tool[i];
      }
      ForwardTrace trace;
      Mat pred = forward(bundle.stack, input, &trace);
      Mat diff = pred - target;
      const double scale = 1.0 / double(b * kStateDim);
      epoch_loss += diff.squaredNorm() * scale * double(b);
      Gradients grads;
      Mat input_grad = backward(bundle.stack, trace, 2.0 * scale * diff, &grads);
      adam_step(bundle.stack, grads, w_state, cfg.lr);
      Mat pb_grad = Mat::Zero(k_tools, kPbDim);
      for (int c = 0; c < b; ++c)
        pb_grad.row(batch_tool[c]) += input_grad.col(c).tail(kPbDim).transpose();
      adam_step(bundle.pb, pb_grad, pb_state, cfg.lr);
    }
    result.loss_history.push_back(epoch_loss / double(total));
  }
  result.bundle = std::move(bundle);
  return result;
}

std::vector<std::pair<std::string, Vec2>> pb_table(const ModelBundle& bundle) {
  std::vector<std::pair<std::string, Vec2>> table;
  for (size_t i = 0; i < bundle.pb_labels.size(); ++i)
    table.emplace_back(bundle.pb_labels[i], Vec2(bundle.pb.row(i).transpose()));
  return table;
}

namespace {

using nlohmann::json;

json sample_to_json(const StateSample& s) {
  json j;
  j["theta_deg"] = {s.theta_deg[0], s.theta_deg[1], s.theta_deg[2], s.theta_deg[3]};
  j["x_cog_mm"] = {s.x_cog_mm[0], s.x_cog_mm[1]};
  j["x_tool_mm"] = {s.x_tool_mm[0], s.x_tool_mm[1], s.x_tool_mm[2]};
  j["s_tool_px"] = {s.s_tool_px[0], s.s_tool_px[1]};
  j["present"] = s.present;
  j["tool"] = s.tool_label;
  return j;
}

StateSample sample_from_json(const json& j) {
  StateSample s;
  for (int i = 0; i < 4; ++i) s.theta_deg[i] = j.at("theta_deg").at(i);
  for (int i = 0; i < 2; ++i) s.x_cog_mm[i] = j.at("x_cog_mm").at(i);
  for (int i = 0; i < 3; ++i) s.x_tool_mm[i] = j.at("x_tool_mm").at(i);
  for (int i = 0; i < 2; ++i) s.s_tool_px[i] = j.at("s_tool_px").at(i);
  for (int i = 0; i < 4; ++i) s.present[i] = j.at("present").at(i);
  s.tool_label = j.value("tool", "");
  return s;
}

}  // namespace

std::string dataset_to_jsonl(const ToolDataset& dataset) {
  std::ostringstream os;
  json header;
  header["tool"] = {{"label", dataset.tool.label},
                    {"weight_g", dataset.tool.weight_g},
                    {"length_mm", dataset.tool.length_mm}};
  os << header.dump() << "\n";
  for (const StateSample& s : dataset.samples) os << sample_to_json(s).dump() << "\n";
  return os.str();
}

ToolDataset dataset_from_jsonl(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  ToolDataset out;
  bool first = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    if (first) {
      out.tool.label = j.at("tool").at("label");
      out.tool.weight_g = j.at("tool").at("weight_g");
      out.tool.length_mm = j.at("tool").at("length_mm");
      first = false;
    } else {
      out.samples.push_back(sample_from_json(j));
    }
  }
  return out;
}

void save_dataset(const ToolDataset& dataset, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write dataset: " + path);
  f << dataset_to_jsonl(dataset);
}

ToolDataset load_dataset(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read dataset: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return dataset_from_jsonl(ss.str());
}

}  // namespace flexbody
