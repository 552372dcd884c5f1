#pragma once

#include <Eigen/Geometry>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "flexbody/types.hpp"

namespace flexbody {

struct LinkSpec {
  std::string name;
  double length_mm = 0.0;
  double mass_g = 0.0;
  double com_offset_mm = 0.0;
  Vec3 axis = -Vec3::UnitZ();  // direction the link extends, in its joint frame
};

struct JointSpec {
  std::string name;                 // shoulder-pitch, shoulder-yaw, elbow-pitch, ankle-pitch
  Vec3 origin_mm = Vec3::Zero();    // translation from the parent frame
  Vec3 axis = Vec3::UnitY();
  double range_min_deg = -90.0;
  double range_max_deg = 90.0;
  double deflection_gain_deg_per_nm = 3.0;
  double backlash_deg = 0.0;
};

struct CameraModel {
  double focal_px = 500.0;
  double cx_px = 320.0;
  double cy_px = 240.0;
  double width_px = 640.0;
  double height_px = 480.0;
  // Camera pose in the torso frame (the frame after the ankle joint).
  Eigen::Isometry3d pose_in_torso = Eigen::Isometry3d::Identity();
};

struct NoiseSpec {
  double theta_deg = 0.0;
  double cog_mm = 0.5;
  double tool_mm = 2.0;
  double screen_px = 2.0;
  std::uint64_t seed = 0;
};

struct PerturbSpec {
  double gain_scale = 1.4;
  double mass_jitter = 0.10;        // relative, uniform per link
  double backlash_deg = 1.0;
  double tip_sag_mm_per_mm_nm = 0.02;
  std::uint64_t seed = 1;

  static PerturbSpec identity() {
    return PerturbSpec{1.0, 0.0, 0.0, 0.0, 0};
  }
};

/// Kinematic chain of the 4-DOF low-rigidity robot. Joints are stored in
/// chain order (ankle first); theta vectors use the sensor order
/// (s-p, s-y, e-p, a-p) and are mapped through theta_index.
struct RobotModel {
  double base_mass_g = 0.0;
  Vec3 base_com_mm = Vec3::Zero();
  std::vector<JointSpec> joints;    // chain order, one child link each
  std::vector<LinkSpec> links;
  CameraModel camera;
  Eigen::Matrix<double, 8, 2> foot_corners_mm;  // 4 per foot, ground plane
  double tip_sag_mm_per_mm_nm = 0.0;            // surrogate-real only
  std::vector<int> theta_index;     // joint i reads theta[theta_index[i]]

  double total_mass_g(const ToolState& tool) const;
  void check_ranges(const Vec4& theta_deg) const;
};

RobotModel default_robot_model();
RobotModel robot_model_from_json(const std::string& json_text);
PerturbSpec perturb_spec_from_json(const std::string& json_text);

/// World transforms of every joint frame, theta in sensor order, degrees.
std::vector<Eigen::Isometry3d> joint_frames(const RobotModel& model, const Vec4& theta_deg);

/// Static holding torque (Nm) per joint against gravity, sensor order.
Vec4 joint_torques(const RobotModel& model, const Vec4& theta_deg, const ToolState& tool);

/// Fixed point of theta_act = theta_cmd - gain .* tau(theta_act), damped
/// iteration (damping 0.5, tol 1e-6 deg, max 100 iterations).
Vec4 deflected_angles(const RobotModel& model, const Vec4& theta_cmd_deg, const ToolState& tool);

Vec3 forward_kinematics(const RobotModel& model, const Vec4& theta_act_deg, const ToolState& tool);

Vec2 center_of_gravity(const RobotModel& model, const Vec4& theta_act_deg, const ToolState& tool);

/// Minimum-norm non-negative corner force distribution reproducing the
/// total weight and the given ground-plane COG.
Eigen::Matrix<double, 8, 1> foot_forces(const RobotModel& model, const Vec2& x_cog_mm,
                                        const ToolState& tool);
Vec2 cog_from_forces(const RobotModel& model, const Eigen::Matrix<double, 8, 1>& forces_n);

struct Projection {
  Vec2 s_tool_px = Vec2::Zero();
  bool visible = false;
};
Projection project_to_screen(const RobotModel& model, const Vec4& theta_act_deg,
                             const Vec3& x_tool_mm);

bool inside_support_polygon(const RobotModel& model, const Vec2& x_cog_mm, double margin_mm = 0.0);

StateSample observe(const RobotModel& model, const Vec4& theta_cmd_deg, const ToolState& tool,
                    const NoiseSpec& noise, std::mt19937_64& rng);
StateSample observe(const RobotModel& model, const Vec4& theta_cmd_deg, const ToolState& tool);

RobotModel surrogate_real(const RobotModel& model, const PerturbSpec& perturbation);

}  // namespace flexbody
