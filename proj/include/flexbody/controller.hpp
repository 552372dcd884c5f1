#pragma once

#include <optional>

#include "flexbody/robot.hpp"
#include "flexbody/wtnpb.hpp"

namespace flexbody {

struct ControlTarget {
  Vec3 x_tool_ref_mm = Vec3::Zero();
  Vec2 x_cog_ref_mm = Vec2::Zero();
  std::optional<Vec2> s_tool_ref_px;
  std::optional<Vec4> theta_cur_deg;
};

struct ControlConfig {
  double alpha = 0.01;           // COG-term weight
  double gamma_max = 0.1;
  int batch = 30;                // gamma candidates per epoch
  int epochs = 30;
  double theta_weight = 0.0;     // optional joint-proximity term
  double screen_weight = 0.0;    // optional screen-target term
  ModalityMask init_mask = ModalityMask::of(false, true, true, false);
};

struct ControlLoss {
  double value = 0.0;
  Vec grad_z;  // d loss / d z
};

/// Task loss on the denormalized decoder prediction, in physical units:
/// ||tool - tool_ref|| + alpha*||cog - cog_ref|| plus the optional terms.
ControlLoss control_loss(const ModelBundle& bundle, const LayerStack& decoder, const Vec& z,
                         const ControlTarget& target, const ControlConfig& cfg);

/// Exponential gamma grid: cfg.batch strictly increasing values ending at
/// gamma_max, smallest near 1e-4. The zero candidate is added by solve().
std::vector<double> gamma_grid(const ControlConfig& cfg);

struct ControlSolution {
  Vec4 theta_cmd_deg;   // decoded command, clamped to joint ranges
  Vec z_final;
  std::vector<double> loss_trace;  // per-epoch best loss, non-increasing
  Vec prediction;       // denormalized 11-dim prediction at z_final
};

ControlSolution solve(const ModelBundle& bundle, const ControlTarget& target, const Vec2& p,
                      const ControlConfig& cfg, const RobotModel& model_for_clamp);

struct IkResult {
  Vec4 theta_cmd_deg;
  double residual_mm = 0.0;
  bool converged = false;  // best-effort flag when false
};

/// Damped least-squares whole-body IK on the rigid (zero-deflection) model
/// with a COG-centering secondary objective. Baseline for comparisons.
IkResult geometric_ik(const RobotModel& rigid_model, const ControlTarget& target,
                      const ToolState& tool);

/// Copy of the model with all deflection gains, backlash, and sag removed.
RobotModel rigidified(const RobotModel& model);

}  // namespace flexbody
