#include "flexbody/robot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace flexbody {

namespace {

constexpr double kGravity = 9.80665;  // m/s^2
constexpr double kDeg2Rad = M_PI / 180.0;

struct PointMass {
  double mass_g;
  Vec3 pos_mm;
  int chain_index;  // first joint in the chain that moves this mass
};

// World-frame point masses of the articulated chain (links + tool).
std::vector<PointMass> chain_masses(const RobotModel& model,
                                    const std::vector<Eigen::Isometry3d>& frames,
                                    const ToolState& tool) {
  std::vector<PointMass> out;
  for (size_t i = 0; i < model.links.size(); ++i) {
    const LinkSpec& link = model.links[i];
    out.push_back({link.mass_g, frames[i] * (link.axis * link.com_offset_mm), int(i)});
  }
  const size_t last = model.links.size() - 1;
  const LinkSpec& hand = model.links[last];
  Vec3 tool_com = frames[last] * (hand.axis * (hand.length_mm + 0.5 * tool.length_mm));
  out.push_back({tool.weight_g, tool_com, int(last)});
  return out;
}

Vec4 chain_order(const RobotModel& model, const Vec4& theta_sensor) {
  Vec4 out;
  for (size_t i = 0; i < model.joints.size(); ++i) out[i] = theta_sensor[model.theta_index[i]];
  return out;
}

// Holding torque in chain order, frames already evaluated at the actual pose.
Eigen::Vector4d holding_torques_chain(const RobotModel& model,
                                      const std::vector<Eigen::Isometry3d>& frames,
                                      const ToolState& tool) {
  auto masses = chain_masses(model, frames, tool);
  Eigen::Vector4d tau = Eigen::Vector4d::Zero();
  for (size_t j = 0; j < model.joints.size(); ++j) {
    Vec3 joint_pos = frames[j].translation();
    Vec3 axis_world = frames[j].rotation() * model.joints[j].axis;
    double tau_grav = 0.0;
    for (const PointMass& m : masses) {
      if (m.chain_index < int(j)) continue;
      Vec3 r_m = (m.pos_mm - joint_pos) * 1e-3;
      Vec3 f_n(0.0, 0.0, -m.mass_g * 1e-3 * kGravity);
      tau_grav += axis_world.dot(r_m.cross(f_n));
    }
    tau[j] = -tau_grav;
  }
  return tau;
}

// Deflection map: theta_cmd - gain*tau - backlash*sign(tau), chain order in, sensor order args.
Vec4 deflection_map(const RobotModel& model, const Vec4& theta_cmd_sensor,
                    const Vec4& theta_act_sensor, const ToolState& tool) {
  auto frames = joint_frames(model, theta_act_sensor);
  Eigen::Vector4d tau_chain = holding_torques_chain(model, frames, tool);
  Vec4 out = theta_cmd_sensor;
  for (size_t j = 0; j < model.joints.size(); ++j) {
    const JointSpec& joint = model.joints[j];
    double tau = tau_chain[j];
    double defl = joint.deflection_gain_deg_per_nm * tau;
    if (joint.backlash_deg > 0.0 && std::abs(tau) > 1e-9)
      defl += joint.backlash_deg * (tau > 0 ? 1.0 : -1.0);
    out[model.theta_index[j]] -= defl;
  }
  return out;
}

double sign_area2(const Vec2& a, const Vec2& b, const Vec2& c) {
  return (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
}

std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  std::vector<Vec2> hull;
  auto build = [&](auto begin, auto end) {
    size_t start = hull.size();
    for (auto it = begin; it != end; ++it) {
      while (hull.size() >= start + 2 &&
             sign_area2(hull[hull.size() - 2], hull[hull.size() - 1], *it) <= 0)
        hull.pop_back();
      hull.push_back(*it);
    }
    hull.pop_back();
  };
  build(pts.begin(), pts.end());
  build(pts.rbegin(), pts.rend());
  return hull;  // counter-clockwise, no repeated endpoint
}

}  // namespace

std::array<ToolState, 6> standard_tool_states() {
  return {ToolState{40, 236, "Long/Light"},   ToolState{80, 236, "Long/Middle"},
          ToolState{120, 236, "Long/Heavy"},  ToolState{40, 176, "Short/Light"},
          ToolState{80, 176, "Short/Middle"}, ToolState{120, 176, "Short/Heavy"}};
}

ToolState tool_state_by_label(const std::string& label) {
  for (const ToolState& t : standard_tool_states())
    if (t.label == label) return t;
  throw ConfigError("unknown tool state label: " + label);
}

Vec StateSample::to_vector() const {
  Vec x(kStateDim);
  x << theta_deg, x_cog_mm, x_tool_mm, s_tool_px;
  return x;
}

StateSample StateSample::from_vector(const Vec& x) {
  if (x.size() != kStateDim) throw std::invalid_argument("StateSample::from_vector: bad size");
  StateSample s;
  s.theta_deg = x.segment<4>(0);
  s.x_cog_mm = x.segment<2>(4);
  s.x_tool_mm = x.segment<3>(6);
  s.s_tool_px = x.segment<2>(9);
  return s;
}

double RobotModel::total_mass_g(const ToolState& tool) const {
  double m = base_mass_g + tool.weight_g;
  for (const LinkSpec& link : links) m += link.mass_g;
  return m;
}

void RobotModel::check_ranges(const Vec4& theta_deg) const {
  for (size_t j = 0; j < joints.size(); ++j) {
    double v = theta_deg[theta_index[j]];
    if (v < joints[j].range_min_deg - 1e-9 || v > joints[j].range_max_deg + 1e-9) {
      std::ostringstream os;
      os << "joint " << joints[j].name << " angle " << v << " deg outside ["
         << joints[j].range_min_deg << ", " << joints[j].range_max_deg << "]";
      throw RangeError(os.str());
    }
  }
}

std::vector<Eigen::Isometry3d> joint_frames(const RobotModel& model, const Vec4& theta_deg) {
  Vec4 q = chain_order(model, theta_deg);
  std::vector<Eigen::Isometry3d> frames(model.joints.size());
  Eigen::Isometry3d t = Eigen::Isometry3d::Identity();
  for (size_t j = 0; j < model.joints.size(); ++j) {
    t = t * Eigen::Translation3d(model.joints[j].origin_mm) *
        Eigen::AngleAxisd(q[j] * kDeg2Rad, model.joints[j].axis);
    frames[j] = t;
  }
  return frames;
}

Vec4 joint_torques(const RobotModel& model, const Vec4& theta_deg, const ToolState& tool) {
  model.check_ranges(theta_deg);
  auto frames = joint_frames(model, theta_deg);
  Eigen::Vector4d tau_chain = holding_torques_chain(model, frames, tool);
  Vec4 out;
  for (size_t j = 0; j < model.joints.size(); ++j) out[model.theta_index[j]] = tau_chain[j];
  return out;
}

Vec4 deflected_angles(const RobotModel& model, const Vec4& theta_cmd_deg, const ToolState& tool) {
  model.check_ranges(theta_cmd_deg);
  constexpr double kDamping = 0.5;
  constexpr double kTol = 1e-6;
  constexpr int kMaxIter = 100;
  Vec4 theta = theta_cmd_deg;
  for (int it = 0; it < kMaxIter; ++it) {
    Vec4 target = deflection_map(model, theta_cmd_deg, theta, tool);
    Vec4 next = theta + kDamping * (target - theta);
    double residual = (deflection_map(model, theta_cmd_deg, next, tool) - next)
                          .lpNorm<Eigen::Infinity>();
    theta = next;
    if (residual <= kTol) return theta;
  }
  std::ostringstream os;
  os << "deflected_angles did not converge; last residual "
     << (deflection_map(model, theta_cmd_deg, theta, tool) - theta).lpNorm<Eigen::Infinity>()
     << " deg, last iterate " << theta.transpose();
  throw std::runtime_error(os.str());
}

Vec3 forward_kinematics(const RobotModel& model, const Vec4& theta_act_deg,
                        const ToolState& tool) {
  auto frames = joint_frames(model, theta_act_deg);
  const LinkSpec& hand = model.links.back();
  Vec3 tip = frames.back() * (hand.axis * (hand.length_mm + tool.length_mm));
  if (model.tip_sag_mm_per_mm_nm > 0.0) {
    // Link bending stand-in: the loaded tool drags the tip down in proportion
    // to its length and the shoulder load.
    Eigen::Vector4d tau_chain = holding_torques_chain(model, frames, tool);
    int shoulder = 1;
    tip.z() -= model.tip_sag_mm_per_mm_nm * tool.length_mm * std::abs(tau_chain[shoulder]);
  }
  return tip;
}

Vec2 center_of_gravity(const RobotModel& model, const Vec4& theta_act_deg,
                       const ToolState& tool) {
  auto frames = joint_frames(model, theta_act_deg);
  auto masses = chain_masses(model, frames, tool);
  Vec3 weighted = model.base_mass_g * model.base_com_mm;
  double total = model.base_mass_g;
  for (const PointMass& m : masses) {
    weighted += m.mass_g * m.pos_mm;
    total += m.mass_g;
  }
  return (weighted / total).head<2>();
}

bool inside_support_polygon(const RobotModel& model, const Vec2& x_cog_mm, double margin_mm) {
  std::vector<Vec2> corners;
  for (int i = 0; i < 8; ++i) corners.push_back(model.foot_corners_mm.row(i).transpose());
  auto hull = convex_hull(corners);
  for (size_t i = 0; i < hull.size(); ++i) {
    const Vec2& a = hull[i];
    const Vec2& b = hull[(i + 1) % hull.size()];
    double edge_len = (b - a).norm();
    if (sign_area2(a, b, x_cog_mm) < margin_mm * edge_len) return false;
  }
  return true;
}

Eigen::Matrix<double, 8, 1> foot_forces(const RobotModel& model, const Vec2& x_cog_mm,
                                        const ToolState& tool) {
  if (!inside_support_polygon(model, x_cog_mm, 0.0)) {
    std::ostringstream os;
    os << "COG (" << x_cog_mm.transpose() << ") mm outside the support polygon; robot would tip";
    throw InstabilityError(os.str());
  }
  const double weight_n = model.total_mass_g(tool) * 1e-3 * kGravity;
  Eigen::Matrix<double, 3, 8> a;
  for (int i = 0; i < 8; ++i) {
    a(0, i) = 1.0;
    a(1, i) = model.foot_corners_mm(i, 0);
    a(2, i) = model.foot_corners_mm(i, 1);
  }
  Vec3 b(weight_n, weight_n * x_cog_mm.x(), weight_n * x_cog_mm.y());

  // Active-set NNLS for min ||f||^2 s.t. Af = b, f >= 0.
  std::vector<bool> free(8, true);
  constexpr double kTol = 1e-12;
  Eigen::Matrix<double, 8, 1> f = Eigen::Matrix<double, 8, 1>::Zero();
  for (int iter = 0; iter < 100; ++iter) {
    std::vector<int> idx;
    for (int i = 0; i < 8; ++i)
      if (free[i]) idx.push_back(i);
    Mat ap(3, idx.size());
    for (size_t c = 0; c < idx.size(); ++c) ap.col(c) = a.col(idx[c]);
    Vec lambda = (ap * ap.transpose()).completeOrthogonalDecomposition().solve(b);
    f.setZero();
    Vec fp = ap.transpose() * lambda;
    int worst = -1;
    double worst_val = -kTol;
    for (size_t c = 0; c < idx.size(); ++c) {
      if (fp[c] < worst_val) {
        worst_val = fp[c];
        worst = idx[c];
      }
      f[idx[c]] = std::max(fp[c], 0.0);
    }
    if (worst >= 0) {
      free[worst] = false;
      continue;
    }
    // KKT on the bound set: multipliers must be non-positive.
    int enter = -1;
    double enter_val = kTol;
    for (int i = 0; i < 8; ++i) {
      if (free[i]) continue;
      double g = a.col(i).dot(lambda);
      if (g > enter_val) {
        enter_val = g;
        enter = i;
      }
    }
    if (enter < 0) return f;
    free[enter] = true;
  }
  return f;  // best effort after iteration cap
}

Vec2 cog_from_forces(const RobotModel& model, const Eigen::Matrix<double, 8, 1>& forces_n) {
  double total = forces_n.sum();
  if (total <= 0.0) throw std::invalid_argument("cog_from_forces: zero total force");
  Vec2 centroid = Vec2::Zero();
  for (int i = 0; i < 8; ++i)
    centroid += forces_n[i] * model.foot_corners_mm.row(i).transpose();
  return centroid / total;
}

Projection project_to_screen(const RobotModel& model, const Vec4& theta_act_deg,
                             const Vec3& x_tool_mm) {
  auto frames = joint_frames(model, theta_act_deg);
  Eigen::Isometry3d cam_world = frames[0] * model.camera.pose_in_torso;
  Vec3 p = cam_world.inverse() * x_tool_mm;
  Projection out;
  if (p.z() <= 1e-9) return out;
  const CameraModel& cam = model.camera;
  out.s_tool_px.x() = cam.focal_px * p.x() / p.z() + cam.cx_px;
  out.s_tool_px.y() = cam.focal_px * p.y() / p.z() + cam.cy_px;
  out.visible = out.s_tool_px.x() >= 0 && out.s_tool_px.x() <= cam.width_px &&
                out.s_tool_px.y() >= 0 && out.s_tool_px.y() <= cam.height_px;
  return out;
}

StateSample observe(const RobotModel& model, const Vec4& theta_cmd_deg, const ToolState& tool,
                    const NoiseSpec& noise, std::mt19937_64& rng) {
  Vec4 theta_act = deflected_angles(model, theta_cmd_deg, tool);
  StateSample s;
  s.theta_deg = theta_cmd_deg;
  s.x_cog_mm = center_of_gravity(model, theta_act, tool);
  if (!inside_support_polygon(model, s.x_cog_mm, 0.0)) {
    std::ostringstream os;
    os << "COG (" << s.x_cog_mm.transpose() << ") mm outside the support polygon";
    throw InstabilityError(os.str());
  }
  s.x_tool_mm = forward_kinematics(model, theta_act, tool);
  Projection proj = project_to_screen(model, theta_act, s.x_tool_mm);
  s.s_tool_px = proj.s_tool_px;
  s.present = {true, true, proj.visible, proj.visible};
  s.tool_label = tool.label;

  auto draw = [&](double sigma) {
    if (sigma <= 0.0) return 0.0;
    return std::normal_distribution<double>(0.0, sigma)(rng);
  };
  for (int i = 0; i < 4; ++i) s.theta_deg[i] += draw(noise.theta_deg);
  for (int i = 0; i < 2; ++i) s.x_cog_mm[i] += draw(noise.cog_mm);
  for (int i = 0; i < 3; ++i) s.x_tool_mm[i] += draw(noise.tool_mm);
  for (int i = 0; i < 2; ++i) s.s_tool_px[i] += draw(noise.screen_px);
  return s;
}

StateSample observe(const RobotModel& model, const Vec4& theta_cmd_deg, const ToolState& tool) {
  NoiseSpec zero;
  zero.theta_deg = zero.cog_mm = zero.tool_mm = zero.screen_px = 0.0;
  std::mt19937_64 rng(0);
  return observe(model, theta_cmd_deg, tool, zero, rng);
}

RobotModel surrogate_real(const RobotModel& model, const PerturbSpec& perturbation) {
  RobotModel out = model;
  std::mt19937_64 rng(perturbation.seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (LinkSpec& link : out.links) link.mass_g *= 1.0 + perturbation.mass_jitter * u(rng);
  for (JointSpec& joint : out.joints) {
    joint.deflection_gain_deg_per_nm *= perturbation.gain_scale;
    joint.backlash_deg = perturbation.backlash_deg;
  }
  out.tip_sag_mm_per_mm_nm = perturbation.tip_sag_mm_per_mm_nm;
  return out;
}

RobotModel default_robot_model() {
  RobotModel m;
  m.base_mass_g = 750.0;
  m.base_com_mm = Vec3(0.0, 0.0, 15.0);

  JointSpec ankle{"ankle-pitch", Vec3(0, 0, 40), Vec3::UnitY(), -30, 30, 6.0, 0.0};
  JointSpec sp{"shoulder-pitch", Vec3(0, -60, 250), Vec3::UnitY(), -120, 20, 6.0, 0.0};
  JointSpec sy{"shoulder-yaw", Vec3(0, 0, -20), Vec3::UnitZ(), -60, 60, 6.0, 0.0};
  JointSpec ep{"elbow-pitch", Vec3(0, 0, -100), Vec3::UnitY(), -120, 10, 6.0, 0.0};
  m.joints = {ankle, sp, sy, ep};
  m.theta_index = {3, 0, 1, 2};

  m.links = {LinkSpec{"torso", 250, 800, 120, Vec3::UnitZ()},
             LinkSpec{"shoulder", 20, 20, 10, -Vec3::UnitZ()},
             LinkSpec{"upper-arm", 100, 90, 50, -Vec3::UnitZ()},
             LinkSpec{"forearm-hand", 120, 70, 60, -Vec3::UnitZ()}};

  m.foot_corners_mm << 40, 60, 40, 10, -40, 10, -40, 60,
                       40, -10, 40, -60, -40, -60, -40, -10;

  CameraModel cam;
  cam.focal_px = 500.0;
  cam.cx_px = 320.0;
  cam.cy_px = 240.0;
  cam.width_px = 640.0;
  cam.height_px = 480.0;
  const double pitch = 10.0 * kDeg2Rad;
  Eigen::Matrix3d r;
  r.col(0) = Vec3(0, -1, 0);
  r.col(1) = Vec3(-std::sin(pitch), 0, -std::cos(pitch));
  r.col(2) = Vec3(std::cos(pitch), 0, -std::sin(pitch));
  cam.pose_in_torso = Eigen::Translation3d(20, 0, 290) * Eigen::Quaterniond(r);
  m.camera = cam;
  return m;
}

namespace {

using nlohmann::json;

Vec3 vec3_from(const json& j) { return Vec3(j.at(0), j.at(1), j.at(2)); }

}  // namespace

RobotModel robot_model_from_json(const std::string& json_text) {
  json j = json::parse(json_text);
  RobotModel m = default_robot_model();
  if (j.contains("base")) {
    m.base_mass_g = j["base"].value("mass_g", m.base_mass_g);
    if (j["base"].contains("com_mm")) m.base_com_mm = vec3_from(j["base"]["com_mm"]);
  }
  if (j.contains("joints")) {
    if (j["joints"].size() != m.joints.size())
      throw ConfigError("robot config must list exactly 4 joints");
    for (size_t i = 0; i < m.joints.size(); ++i) {
      const json& jj = j["joints"][i];
      JointSpec& joint = m.joints[i];
      joint.name = jj.value("name", joint.name);
      if (jj.contains("origin_mm")) joint.origin_mm = vec3_from(jj["origin_mm"]);
      if (jj.contains("axis")) joint.axis = vec3_from(jj["axis"]).normalized();
      if (jj.contains("range_deg")) {
        joint.range_min_deg = jj["range_deg"].at(0);
        joint.range_max_deg = jj["range_deg"].at(1);
        if (joint.range_min_deg >= joint.range_max_deg)
          throw ConfigError("joint range min must be below max: " + joint.name);
      }
      joint.deflection_gain_deg_per_nm =
          jj.value("deflection_gain_deg_per_nm", joint.deflection_gain_deg_per_nm);
      if (joint.deflection_gain_deg_per_nm < 0.0)
        throw ConfigError("deflection gain must be non-negative: " + joint.name);
    }
  }
  if (j.contains("links")) {
    if (j["links"].size() != m.links.size())
      throw ConfigError("robot config must list exactly 4 links");
    for (size_t i = 0; i < m.links.size(); ++i) {
      const json& jl = j["links"][i];
      LinkSpec& link = m.links[i];
      link.name = jl.value("name", link.name);
      link.length_mm = jl.value("length_mm", link.length_mm);
      link.mass_g = jl.value("mass_g", link.mass_g);
      link.com_offset_mm = jl.value("com_offset_mm", link.com_offset_mm);
      if (jl.contains("axis")) link.axis = vec3_from(jl["axis"]).normalized();
      if (link.length_mm <= 0.0) throw ConfigError("link length must be positive: " + link.name);
      if (link.mass_g < 0.0) throw ConfigError("link mass must be non-negative: " + link.name);
      if (link.com_offset_mm < 0.0 || link.com_offset_mm > link.length_mm)
        throw ConfigError("link com_offset must lie within the link: " + link.name);
    }
  }
  if (j.contains("foot_corners_mm")) {
    const json& jc = j["foot_corners_mm"];
    if (jc.size() != 8) throw ConfigError("foot_corners_mm must list 8 corners");
    for (int i = 0; i < 8; ++i) {
      m.foot_corners_mm(i, 0) = jc[i].at(0);
      m.foot_corners_mm(i, 1) = jc[i].at(1);
    }
  }
  if (j.contains("camera")) {
    const json& jc = j["camera"];
    CameraModel& cam = m.camera;
    cam.focal_px = jc.value("focal_px", cam.focal_px);
    cam.cx_px = jc.value("cx_px", cam.cx_px);
    cam.cy_px = jc.value("cy_px", cam.cy_px);
    cam.width_px = jc.value("width_px", cam.width_px);
    cam.height_px = jc.value("height_px", cam.height_px);
    if (cam.width_px <= 0 || cam.height_px <= 0)
      throw ConfigError("camera image size must be positive");
    if (jc.contains("position_in_torso_mm") || jc.contains("pitch_down_deg")) {
      Vec3 pos(20, 0, 290);
      if (jc.contains("position_in_torso_mm")) pos = vec3_from(jc["position_in_torso_mm"]);
      double pitch = jc.value("pitch_down_deg", 10.0) * kDeg2Rad;
      Eigen::Matrix3d r;
      r.col(0) = Vec3(0, -1, 0);
      r.col(1) = Vec3(-std::sin(pitch), 0, -std::cos(pitch));
      r.col(2) = Vec3(std::cos(pitch), 0, -std::sin(pitch));
      cam.pose_in_torso = Eigen::Translation3d(pos) * Eigen::Quaterniond(r);
    }
  }
  return m;
}

PerturbSpec perturb_spec_from_json(const std::string& json_text) {
  json j = json::parse(json_text);
  PerturbSpec p;
  p.gain_scale = j.value("gain_scale", p.gain_scale);
  p.mass_jitter = j.value("mass_jitter", p.mass_jitter);
  p.backlash_deg = j.value("backlash_deg", p.backlash_deg);
  p.tip_sag_mm_per_mm_nm = j.value("tip_sag_mm_per_mm_nm", p.tip_sag_mm_per_mm_nm);
  p.seed = j.value("seed", p.seed);
  return p;
}

}  // namespace flexbody
