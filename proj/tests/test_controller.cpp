#include <doctest.h>

#include <random>

#include "flexbody/controller.hpp"

using namespace flexbody;

namespace {

ModelBundle toy_bundle(std::uint64_t seed) {
  ModelBundle b = make_bundle(seed, {24, 12, kLatentDim, 12, 24});
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> n(0, 1);
  Mat samples(kStateDim, 40);
  for (int c = 0; c < samples.cols(); ++c) {
    Vec x(kStateDim);
    x << -70 + 3.0 * c, 5 * n(rng), -40 + n(rng), 2 * n(rng),        // theta
        5 * n(rng), 5 * n(rng),                                      // cog
        150 + 4.0 * c, -60 + 3 * n(rng), -30 + 5 * n(rng),           // tool
        320 + 40 * n(rng), 240 + 40 * n(rng);                        // screen
    samples.col(c) = x;
  }
  b.normalizer = Normalizer::fit(samples);
  b.pb_labels = {"toy"};
  b.pb = Mat::Zero(1, kPbDim);
  return b;
}

ControlTarget full_target() {
  ControlTarget t;
  t.x_tool_ref_mm = Vec3(180, -55, -20);
  t.x_cog_ref_mm = Vec2(2, -1);
  t.s_tool_ref_px = Vec2(300, 250);
  t.theta_cur_deg = Vec4(-60, 3, -35, 1);
  return t;
}

}  // namespace

TEST_CASE("gamma grid: geometric, increasing, pinned endpoints") {
  ControlConfig cfg;  // batch 30, gamma_max 0.1
  std::vector<double> g = gamma_grid(cfg);
  REQUIRE(int(g.size()) == cfg.batch);
  CHECK(g.front() == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(g.back() == doctest::Approx(cfg.gamma_max).epsilon(1e-12));
  double ratio = g[1] / g[0];
  for (size_t i = 1; i < g.size(); ++i) {
    CHECK(g[i] > g[i - 1]);
    CHECK(g[i] / g[i - 1] == doctest::Approx(ratio).epsilon(1e-9));
  }
}

TEST_CASE("control loss matches a hand-computed value on the decoded state") {
  ModelBundle b = toy_bundle(61);
  LayerStack dec = decoder_stack(b);
  Vec z = Vec::Constant(kLatentDim, 0.2);
  ControlTarget t = full_target();
  ControlConfig cfg;
  cfg.theta_weight = 0.05;
  cfg.screen_weight = 0.001;

  Vec pred = decode(b, z);
  double expect = (pred.segment(6, 3) - t.x_tool_ref_mm).norm() +
                  cfg.alpha * (pred.segment(4, 2) - t.x_cog_ref_mm).norm() +
                  cfg.theta_weight * (pred.head(4) - *t.theta_cur_deg).norm() +
                  cfg.screen_weight * (pred.segment(9, 2) - *t.s_tool_ref_px).norm();
  ControlLoss l = control_loss(b, dec, z, t, cfg);
  CHECK(l.value == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("control loss gradient matches central finite differences") {
  ModelBundle b = toy_bundle(67);
  LayerStack dec = decoder_stack(b);
  ControlTarget t = full_target();
  ControlConfig cfg;
  cfg.theta_weight = 0.05;
  cfg.screen_weight = 0.001;

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  for (int trial = 0; trial < 5; ++trial) {
    Vec z(kLatentDim);
    for (int i = 0; i < kLatentDim; ++i) z[i] = u(rng);
    ControlLoss l = control_loss(b, dec, z, t, cfg);
    const double h = 1e-6;
    for (int d = 0; d < kLatentDim; ++d) {
      Vec zp = z, zm = z;
      zp[d] += h;
      zm[d] -= h;
      double fd = (control_loss(b, dec, zp, t, cfg).value -
                   control_loss(b, dec, zm, t, cfg).value) /
                  (2 * h);
      CHECK(l.grad_z[d] == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}

TEST_CASE("solve: non-increasing trace, in-range command, deterministic") {
  ModelBundle b = toy_bundle(71);
  RobotModel m = default_robot_model();
  ControlTarget t;
  t.x_tool_ref_mm = Vec3(170, -58, -25);
  ControlConfig cfg;

  ControlSolution s = solve(b, t, Vec2(0.1, -0.1), cfg, m);
  REQUIRE(int(s.loss_trace.size()) == cfg.epochs);
  for (size_t i = 1; i < s.loss_trace.size(); ++i) CHECK(s.loss_trace[i] <= s.loss_trace[i - 1]);
  CHECK(s.loss_trace.back() < s.loss_trace.front() + 1e-12);
  CHECK_NOTHROW(m.check_ranges(s.theta_cmd_deg));
  REQUIRE(s.z_final.size() == kLatentDim);
  REQUIRE(s.prediction.size() == kStateDim);

  ControlSolution again = solve(b, t, Vec2(0.1, -0.1), cfg, m);
  CHECK((s.z_final - again.z_final).norm() == 0.0);
  CHECK((s.theta_cmd_deg - again.theta_cmd_deg).norm() == 0.0);
}

TEST_CASE("solve rejects an initialization mask outside the trained set") {
  ModelBundle b = toy_bundle(73);
  ControlConfig cfg;
  cfg.init_mask = ModalityMask::parse("0011");
  CHECK_THROWS_AS(solve(b, ControlTarget{}, Vec2::Zero(), cfg, default_robot_model()),
                  ConfigError);
}

TEST_CASE("rigidified removes every compliance term") {
  RobotModel sur = surrogate_real(default_robot_model(), PerturbSpec{});
  RobotModel r = rigidified(sur);
  for (const JointSpec& j : r.joints) {
    CHECK(j.deflection_gain_deg_per_nm == 0.0);
    CHECK(j.backlash_deg == 0.0);
  }
  CHECK(r.tip_sag_mm_per_mm_nm == 0.0);
  ToolState tool = tool_state_by_label("Long/Heavy");
  Vec4 q(-80, 10, -20, 5);
  CHECK((deflected_angles(r, q, tool) - q).norm() == 0.0);
}

TEST_CASE("geometric IK reaches realized rigid-model targets") {
  RobotModel rigid = rigidified(default_robot_model());
  ToolState tool = tool_state_by_label("Long/Middle");
  std::mt19937_64 rng(29);
  int solved = 0;
  for (int trial = 0; trial < 8; ++trial) {
    Vec4 q;
    for (size_t j = 0; j < rigid.joints.size(); ++j) {
      std::uniform_real_distribution<double> u(rigid.joints[j].range_min_deg * 0.6,
                                               rigid.joints[j].range_max_deg * 0.6);
      q[rigid.theta_index[j]] = u(rng);
    }
    ControlTarget t;
    t.x_tool_ref_mm = forward_kinematics(rigid, q, tool);
    t.x_cog_ref_mm = center_of_gravity(rigid, q, tool);
    IkResult ik = geometric_ik(rigid, t, tool);
    if (!ik.converged) continue;
    ++solved;
    CHECK((forward_kinematics(rigid, ik.theta_cmd_deg, tool) - t.x_tool_ref_mm).norm() < 0.1);
    CHECK_NOTHROW(rigid.check_ranges(ik.theta_cmd_deg));
  }
  // Realized targets are reachable by construction; DLS should solve most.
  CHECK(solved >= 6);
}
