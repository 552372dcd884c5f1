#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace flexbody {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;

// Sensor vector layout: (theta[4], x_cog[2], x_tool[3], s_tool[2]).
inline constexpr int kNumModalities = 4;
inline constexpr int kStateDim = 11;
inline constexpr std::array<int, 4> kBlockOffset = {0, 4, 6, 9};
inline constexpr std::array<int, 4> kBlockSize = {4, 2, 3, 2};

enum Modality : int { kTheta = 0, kCog = 1, kTool3d = 2, kScreen = 3 };

/// Grasped-tool regime: weight (g) and length (mm) plus a class label
/// such as "Long/Heavy" used to key parametric biases.
struct ToolState {
  double weight_g = 0.0;
  double length_mm = 0.0;
  std::string label;

  bool operator==(const ToolState& o) const { return label == o.label; }
};

/// The six training tool states (weights 40/80/120 g, lengths 176/236 mm).
std::array<ToolState, 6> standard_tool_states();
ToolState tool_state_by_label(const std::string& label);

/// One observation of the robot. theta is the commanded joint angle;
/// the remaining fields are measured on the deflected configuration.
struct StateSample {
  Vec4 theta_deg = Vec4::Zero();
  Vec2 x_cog_mm = Vec2::Zero();
  Vec3 x_tool_mm = Vec3::Zero();
  Vec2 s_tool_px = Vec2::Zero();
  std::array<bool, 4> present = {true, true, true, true};
  std::string tool_label;  // metadata only, never a network input

  Vec to_vector() const;
  static StateSample from_vector(const Vec& x);
};

struct RangeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InstabilityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace flexbody
