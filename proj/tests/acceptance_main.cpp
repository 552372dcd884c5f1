// Acceptance gate: one pass/fail line per criterion, nonzero exit on failure.
//
// CE-1  Parametric biases self-organize by tool weight and length.
// CE-2  Online PB estimation degrades gracefully as sensors drop out.
// CE-3  Learned control beats the geometric baseline on the surrogate plant.
// CE-4  PB adaptation recovers balance and accuracy across tool swaps.
// CE-5  Backpropagation is exact against finite differences.
// CE-6  Latent-space control always produces non-increasing loss traces.
// CE-7  Simulator deflection shifts sit in the calibrated physical bands.
// CE-8  Foot-force COG reconstruction is exact and non-negative.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <vector>

#include "flexbody/controller.hpp"
#include "flexbody/online.hpp"
#include "flexbody/pca.hpp"
#include "flexbody/trainer.hpp"

using namespace flexbody;

namespace {

int g_failures = 0;

void report(const char* id, bool pass, const std::string& detail) {
  std::printf("%s %s: %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c, d);
  return buf;
}

// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    const int n = int(v.size());
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int i, int j) { return v[i] < v[j]; });
    std::vector<double> r(n);
    int i = 0;
    while (i < n) {
      int j = i;
      while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
      double avg = 0.5 * (i + j) + 1.0;
      for (int k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  std::vector<double> ra = ranks(a), rb = ranks(b);
  const int n = int(a.size());
  double ma = 0, mb = 0;
  for (int i = 0; i < n; ++i) ma += ra[i], mb += rb[i];
  ma /= n, mb /= n;
  double cov = 0, va = 0, vb = 0;
  for (int i = 0; i < n; ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  return cov / std::sqrt(va * vb);
}

struct TrainedModels {
  ModelBundle sim;
  ModelBundle finetuned;
  double train_seconds = 0.0;
};

TrainedModels train_models(const RobotModel& robot) {
  auto t0 = std::chrono::steady_clock::now();

  CollectConfig cc;  // random-constrained, default noise, 10 mm margin
  std::vector<ToolDataset> sim_data;
  int k = 0;
  for (const ToolState& tool : standard_tool_states())
    sim_data.push_back(collect_dataset(robot, tool, 500, cc, 1000 + k++));

  TrainConfig tc;  // 1500 epochs, batch 64, lr 1e-3
  tc.seed = 1;
  TrainedModels out;
  out.sim = train(sim_data, tc).bundle;

  RobotModel sur = surrogate_real(robot, PerturbSpec{});
  CollectConfig curated = cc;
  curated.policy = CollectPolicy::kCuratedGrid;
  std::vector<ToolDataset> real_data;
  for (const ToolState& tool : standard_tool_states())
    real_data.push_back(collect_dataset(
        sur, tool, curated.curated_grid_count + curated.curated_random_count, curated,
        2000 + k++));

  TrainConfig ft = tc;
  ft.fine_tune = true;
  ft.epochs = 500;
  out.finetuned = train(real_data, ft, out.sim).bundle;

  out.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

void ce1_pb_map(const TrainedModels& models) {
  std::vector<Vec> points;
  std::vector<double> weights;
  std::vector<bool> is_long;
  for (const auto& [label, p] : pb_table(models.sim)) {
    ToolState t = tool_state_by_label(label);
    points.push_back(Vec(p));
    weights.push_back(t.weight_g);
    is_long.push_back(t.length_mm > 200.0);
  }
  PcaResult pca = pca2(points);

  // Weight ordering along a principal axis of the PB cloud.
  double best_rho = 0.0;
  for (int c = 0; c < 2; ++c) {
    std::vector<double> proj(points.size());
    for (size_t i = 0; i < points.size(); ++i) proj[i] = pca.projected(int(i), c);
    best_rho = std::max(best_rho, std::abs(spearman(weights, proj)));
  }

  // Length classes linearly separable: scan projection directions for a
  // positive margin between every Long PB and every Short PB.
  bool separated = false;
  for (int ang = 0; ang < 360 && !separated; ++ang) {
    double th = ang * M_PI / 180.0;
    Vec2 dir(std::cos(th), std::sin(th));
    double long_max = -1e18, short_min = 1e18;
    for (size_t i = 0; i < points.size(); ++i) {
      double v = dir.dot(Vec2(points[i]));
      if (is_long[i]) long_max = std::max(long_max, v);
      else short_min = std::min(short_min, v);
    }
    separated = long_max < short_min;
  }

  bool in_budget = models.train_seconds <= 900.0;
  report("CE-1", best_rho >= 0.9 && separated && in_budget,
         fmt("PB map self-organization: weight |spearman|=%.3f (>=0.9), length separation=%.0f "
             "(1 required), train time %.0fs (<=900)",
             best_rho, separated ? 1.0 : 0.0, models.train_seconds));
}

void ce2_regime_ordering(const RobotModel& robot, const ModelBundle& bundle) {
  ToolState true_tool = tool_state_by_label("Long/Middle");
  Vec2 p_start = bundle.pb_for("Short/Middle");
  Vec2 p_true = bundle.pb_for("Long/Middle");
  double init = (p_start - p_true).norm();

  OnlineConfig cfg;
  NoiseSpec noise;
  double final_dist[3] = {0, 0, 0};
  const SensorRegime regimes[3] = {SensorRegime::kA, SensorRegime::kB, SensorRegime::kC};
  for (int r = 0; r < 3; ++r) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      OnlineTrajectory traj =
          run_online(robot, true_tool, regimes[r], 100, seed, bundle, p_start, cfg, noise);
      final_dist[r] += (traj.pb.back() - p_true).norm() / 5.0;
    }
  }

  double tol = 0.10 * init;
  bool ordered = final_dist[0] <= final_dist[1] + tol && final_dist[1] <= final_dist[2] + tol;
  bool converged = final_dist[0] < 0.5 * init;
  report("CE-2", ordered && converged,
         fmt("online regime ordering: final dist A=%.4f <= B=%.4f <= C=%.4f (tol 10%% of "
             "init=%.4f), A < 50%% of init",
             final_dist[0], final_dist[1], final_dist[2], init));
}

void ce3_control_ordering(const RobotModel& robot, const TrainedModels& models) {
  RobotModel plant = surrogate_real(robot, PerturbSpec{});
  RobotModel rigid = rigidified(robot);
  ToolState tool = tool_state_by_label("Long/Middle");
  ControlConfig ctrl;
  NoiseSpec no_noise{0, 0, 0, 0, 0};

  std::mt19937_64 rng(1);
  double mean_err[3] = {0, 0, 0};  // geometric, sim, finetuned
  const int n_targets = 5;
  for (int i = 0; i < n_targets; ++i) {
    // Target: realized (tip, cog) of a random stable pose on the surrogate
    // plant, so the reference pair is physically consistent.
    Vec4 theta;
    Vec3 target_tip;
    Vec2 target_cog;
    for (;;) {
      for (size_t j = 0; j < plant.joints.size(); ++j) {
        std::uniform_real_distribution<double> u(plant.joints[j].range_min_deg,
                                                 plant.joints[j].range_max_deg);
        theta[plant.theta_index[j]] = u(rng);
      }
      try {
        Vec4 act = deflected_angles(plant, theta, tool);
        target_cog = center_of_gravity(plant, act, tool);
        if (!inside_support_polygon(plant, target_cog, 10.0)) continue;
        target_tip = forward_kinematics(plant, act, tool);
        if (!project_to_screen(plant, act, target_tip).visible) continue;
        break;
      } catch (const std::runtime_error&) {
      }
    }
    ControlTarget target;
    target.x_tool_ref_mm = target_tip;
    target.x_cog_ref_mm = target_cog;

    auto realized_error = [&](const Vec4& cmd) {
      Vec4 clamped = cmd;
      for (size_t j = 0; j < plant.joints.size(); ++j) {
        double& v = clamped[plant.theta_index[j]];
        v = std::clamp(v, plant.joints[j].range_min_deg, plant.joints[j].range_max_deg);
      }
      Vec4 act = deflected_angles(plant, clamped, tool);
      return (forward_kinematics(plant, act, tool) - target_tip).norm();
    };

    mean_err[0] += realized_error(geometric_ik(rigid, target, tool).theta_cmd_deg) / n_targets;
    mean_err[1] += realized_error(solve(models.sim, target, models.sim.pb_for(tool.label), ctrl,
                                        robot).theta_cmd_deg) /
                   n_targets;
    mean_err[2] += realized_error(solve(models.finetuned, target,
                                        models.finetuned.pb_for(tool.label), ctrl, robot)
                                      .theta_cmd_deg) /
                   n_targets;
  }

  bool ordered = mean_err[2] < mean_err[1] && mean_err[1] < mean_err[0];
  bool margin = mean_err[2] <= 0.6 * mean_err[0];
  report("CE-3", ordered && margin,
         fmt("control on surrogate plant: mean error finetuned=%.1fmm < sim=%.1fmm < "
             "geometric=%.1fmm, finetuned <= 60%% of geometric",
             mean_err[2], mean_err[1], mean_err[0]));
}

void ce4_tool_switch(const RobotModel& robot, const ModelBundle& bundle) {
  OnlineConfig cfg;
  cfg.n_max = 5;
  OnlineBuffer buffer(cfg.n_max);
  Vec2 p = bundle.pb_for("Long/Light");
  MomentumState mstate = make_momentum_state(kPbDim);
  std::mt19937_64 rng(1);
  std::array<bool, 4> pattern = regime_pattern(SensorRegime::kB);
  ControlConfig ctrl;
  NoiseSpec noise;
  const int ticks_per_phase = 40;

  std::vector<double> control_err, cog_err;
  for (const char* tool_label : {"Long/Heavy", "Short/Heavy"}) {
    ToolState tool = tool_state_by_label(tool_label);
    for (int t = 0; t < ticks_per_phase; ++t) {
      // Reachable target: realized (tip, cog) of a random stable pose.
      Vec4 theta;
      ControlTarget target;
      for (;;) {
        for (size_t j = 0; j < robot.joints.size(); ++j) {
          std::uniform_real_distribution<double> u(robot.joints[j].range_min_deg,
                                                   robot.joints[j].range_max_deg);
          theta[robot.theta_index[j]] = u(rng);
        }
        try {
          Vec4 act = deflected_angles(robot, theta, tool);
          Vec2 pose_cog = center_of_gravity(robot, act, tool);
          if (!inside_support_polygon(robot, pose_cog, 10.0)) continue;
          Vec3 tip = forward_kinematics(robot, act, tool);
          if (!project_to_screen(robot, act, tip).visible) continue;
          target.x_tool_ref_mm = tip;
          target.x_cog_ref_mm = pose_cog;
          break;
        } catch (const std::runtime_error&) {
        }
      }

      Vec4 cmd = solve(bundle, target, p, ctrl, robot).theta_cmd_deg;
      Vec4 act = deflected_angles(robot, cmd, tool);
      Vec3 tip = forward_kinematics(robot, act, tool);
      Vec2 cog = center_of_gravity(robot, act, tool);
      control_err.push_back((tip - target.x_tool_ref_mm).norm());
      cog_err.push_back((cog - target.x_cog_ref_mm).norm());

      StateSample s;
      s.theta_deg = cmd;
      s.x_cog_mm = cog;
      s.x_tool_mm = tip;
      Projection proj = project_to_screen(robot, act, tip);
      s.s_tool_px = proj.s_tool_px;
      s.present = {pattern[0], pattern[1], pattern[2] && proj.visible,
                   pattern[3] && proj.visible};
      auto draw = [&](double sigma) {
        return sigma > 0.0 ? std::normal_distribution<double>(0.0, sigma)(rng) : 0.0;
      };
      for (int i = 0; i < 2; ++i) s.x_cog_mm[i] += draw(noise.cog_mm);
      for (int i = 0; i < 2; ++i) s.s_tool_px[i] += draw(noise.screen_px);
      if (maybe_collect(buffer, s, bundle.masks, cfg)) update_pb(buffer, bundle, p, mstate, cfg);
    }
  }

  auto window = [&](const std::vector<double>& v, int begin) {
    double s = 0;
    for (int i = begin; i < begin + 5; ++i) s += v[i];
    return s / 5.0;
  };
  double cog_start = window(cog_err, 0);
  double cog_end = window(cog_err, ticks_per_phase - 5);
  double ctl_swap = window(control_err, ticks_per_phase);
  double ctl_end = window(control_err, int(control_err.size()) - 5);
  bool cog_ok = cog_end <= 0.7 * cog_start;
  bool ctl_ok = ctl_end < ctl_swap;
  report("CE-4", cog_ok && ctl_ok,
         fmt("tool switch adaptation: phase-1 COG error %.1f -> %.1fmm (<=70%%), phase-2 "
             "control error %.1f -> %.1fmm (must drop)",
             cog_start, cog_end, ctl_swap, ctl_end));
}

void ce5_gradient_exactness() {
  std::mt19937_64 rng(12345);
  double max_rel = 0.0;
  for (int cfg_i = 0; cfg_i < 100; ++cfg_i) {
    std::uniform_int_distribution<int> dim_u(2, 7), layers_u(2, 4), batch_u(1, 4);
    std::vector<int> dims(layers_u(rng) + 1);
    for (int& d : dims) d = dim_u(rng);
    LayerStack s = make_stack(dims, rng());
    std::normal_distribution<double> n(0, 1);
    for (Vec& b : s.biases)
      for (int i = 0; i < b.size(); ++i) b[i] = 0.3 * n(rng);
    int batch = batch_u(rng);
    Mat x(dims.front(), batch), t(dims.back(), batch);
    for (int i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
    for (int i = 0; i < t.size(); ++i) t.data()[i] = n(rng);

    auto loss = [&](const LayerStack& st, const Mat& in) {
      Mat y = forward(st, in);
      return 0.5 * (y - t).squaredNorm();
    };
    ForwardTrace trace;
    Mat y = forward(s, x, &trace);
    Gradients g;
    Mat gx = backward(s, trace, Mat(y - t), &g);

    const double h = 1e-5;
    auto rel = [&](double analytic, double fd) {
      return std::abs(analytic - fd) / std::max(1.0, std::max(std::abs(analytic), std::abs(fd)));
    };
    for (int l = 0; l < s.num_layers(); ++l)
      for (int i = 0; i < s.weights[l].size(); ++i) {
        LayerStack sp = s, sm = s;
        sp.weights[l].data()[i] += h;
        sm.weights[l].data()[i] -= h;
        max_rel = std::max(max_rel, rel(g.weights[l].data()[i],
                                        (loss(sp, x) - loss(sm, x)) / (2 * h)));
      }
    for (int i = 0; i < x.size(); ++i) {
      Mat xp = x, xm = x;
      xp.data()[i] += h;
      xm.data()[i] -= h;
      max_rel = std::max(max_rel, rel(gx.data()[i], (loss(s, xp) - loss(s, xm)) / (2 * h)));
    }
  }
  report("CE-5", max_rel <= 1e-5,
         fmt("backprop vs central differences over 100 random networks: max relative error "
             "%.2e (<=1e-5)",
             max_rel));
}

void ce6_monotone_traces(const RobotModel& robot, const ModelBundle& bundle) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> px(-1.0, 1.0);
  ControlConfig ctrl;
  ToolState tool = tool_state_by_label("Long/Middle");
  int monotone = 0;
  const int runs = 100;
  for (int i = 0; i < runs; ++i) {
    ControlTarget target;
    // Random (possibly unreachable) targets around the workspace.
    target.x_tool_ref_mm =
        Vec3(300 * px(rng), -60 + 100 * px(rng), 150 * px(rng));
    target.x_cog_ref_mm = Vec2(20 * px(rng), 20 * px(rng));
    Vec2 p(px(rng), px(rng));
    ControlSolution sol = solve(bundle, target, p, ctrl, robot);
    bool ok = true;
    for (size_t e = 1; e < sol.loss_trace.size(); ++e)
      ok = ok && sol.loss_trace[e] <= sol.loss_trace[e - 1] + 1e-12;
    monotone += ok;
  }
  (void)tool;
  report("CE-6", monotone == runs,
         fmt("non-increasing control loss traces: %.0f/%.0f solves", double(monotone),
             double(runs)));
}

void ce7_calibration(const RobotModel& robot) {
  Vec4 ref(-90, 0, -10, 5);  // documented reference pose, sensor order
  ToolState light = tool_state_by_label("Long/Light");
  ToolState heavy = tool_state_by_label("Long/Heavy");
  Vec4 act_l = deflected_angles(robot, ref, light);
  Vec4 act_h = deflected_angles(robot, ref, heavy);
  double tip_shift =
      (forward_kinematics(robot, act_h, heavy) - forward_kinematics(robot, act_l, light)).norm();
  double cog_shift =
      (center_of_gravity(robot, act_h, heavy) - center_of_gravity(robot, act_l, light)).norm();
  bool ok = tip_shift >= 35.0 && tip_shift <= 65.0 && cog_shift >= 10.0 && cog_shift <= 20.0;
  report("CE-7", ok,
         fmt("Long Light->Heavy at reference pose: tip shift %.1fmm in [35,65], COG shift "
             "%.1fmm in [10,20]",
             tip_shift, cog_shift));
}

void ce8_cog_roundtrip(const RobotModel& robot) {
  ToolState tool = tool_state_by_label("Long/Heavy");
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> ux(-40, 40), uy(-60, 60);
  int checked = 0;
  double max_err = 0.0;
  double min_force = 0.0;
  while (checked < 1000) {
    Vec2 c(ux(rng), uy(rng));
    if (!inside_support_polygon(robot, c, 0.1)) continue;
    auto f = foot_forces(robot, c, tool);
    min_force = std::min(min_force, f.minCoeff());
    max_err = std::max(max_err, (cog_from_forces(robot, f) - c).norm());
    ++checked;
  }
  report("CE-8", max_err <= 1e-9 && min_force >= 0.0,
         fmt("foot-force COG round trip over 1000 draws: max error %.2e mm (<=1e-9), min "
             "force %.2e N (>=0)",
             max_err, min_force));
}

}  // namespace

int main() {
  RobotModel robot = default_robot_model();

  // Criteria independent of training first: they fail fast.
  ce5_gradient_exactness();
  ce7_calibration(robot);
  ce8_cog_roundtrip(robot);

  TrainedModels models = train_models(robot);
  ce1_pb_map(models);
  ce2_regime_ordering(robot, models.sim);
  ce3_control_ordering(robot, models);
  ce4_tool_switch(robot, models.sim);
  ce6_monotone_traces(robot, models.sim);

  std::printf("%d/8 criteria passed\n", 8 - g_failures);
  return g_failures == 0 ? 0 : 1;
}
