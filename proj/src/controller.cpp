#include "flexbody/controller.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace flexbody {

namespace {

constexpr double kNormEps = 1e-9;

// d||v||/dv, zero-safe.
Vec norm_grad(const Vec& v) {
  double n = v.norm();
  if (n < kNormEps) return Vec::Zero(v.size());
  return v / n;
}

}  // namespace

ControlLoss control_loss(const ModelBundle& bundle, const LayerStack& decoder, const Vec& z,
                         const ControlTarget& target, const ControlConfig& cfg) {
  ForwardTrace trace;
  Vec pred_norm = forward(decoder, z, &trace);
  Vec pred = bundle.normalizer.denormalize(pred_norm);

  Vec grad_pred = Vec::Zero(kStateDim);  // physical units
  ControlLoss out;

  Vec tool_err = pred.segment(kBlockOffset[kTool3d], 3) - target.x_tool_ref_mm;
  out.value += tool_err.norm();
  grad_pred.segment(kBlockOffset[kTool3d], 3) += norm_grad(tool_err);

  Vec cog_err = pred.segment(kBlockOffset[kCog], 2) - target.x_cog_ref_mm;
  out.value += cfg.alpha * cog_err.norm();
  grad_pred.segment(kBlockOffset[kCog], 2) += cfg.alpha * norm_grad(cog_err);

  if (cfg.theta_weight > 0.0 && target.theta_cur_deg) {
    Vec theta_err = pred.segment(kBlockOffset[kTheta], 4) - *target.theta_cur_deg;
    out.value += cfg.theta_weight * theta_err.norm();
    grad_pred.segment(kBlockOffset[kTheta], 4) += cfg.theta_weight * norm_grad(theta_err);
  }
  if (cfg.screen_weight > 0.0 && target.s_tool_ref_px) {
    Vec s_err = pred.segment(kBlockOffset[kScreen], 2) - *target.s_tool_ref_px;
    out.value += cfg.screen_weight * s_err.norm();
    grad_pred.segment(kBlockOffset[kScreen], 2) += cfg.screen_weight * norm_grad(s_err);
  }

  // Chain through the denormalization, then the decoder.
  Vec grad_norm = grad_pred.cwiseProduct(bundle.normalizer.std);
  out.grad_z = backward(decoder, trace, Mat(grad_norm)).col(0);
  return out;
}

std::vector<double> gamma_grid(const ControlConfig& cfg) {
  const double gamma_min = 1e-4;
  std::vector<double> grid(cfg.batch);
  const double rho = std::pow(gamma_min / cfg.gamma_max, 1.0 / double(cfg.batch - 1));
  for (int j = 0; j < cfg.batch; ++j)
    grid[j] = cfg.gamma_max * std::pow(rho, double(cfg.batch - 1 - j));
  return grid;
}

ControlSolution solve(const ModelBundle& bundle, const ControlTarget& target, const Vec2& p,
                      const ControlConfig& cfg, const RobotModel& model_for_clamp) {
  if (!mask_feasible(cfg.init_mask, bundle.masks))
    throw ConfigError("control initialization mask " + cfg.init_mask.str() +
                      " is not in the feasible set");

  // Reference sample: target values in their slots, normalizer means elsewhere
  // (masked blocks are zeroed on assembly anyway).
  Vec ref = bundle.normalizer.mean;
  ref.segment(kBlockOffset[kCog], 2) = target.x_cog_ref_mm;
  ref.segment(kBlockOffset[kTool3d], 3) = target.x_tool_ref_mm;
  if (target.s_tool_ref_px) ref.segment(kBlockOffset[kScreen], 2) = *target.s_tool_ref_px;
  if (target.theta_cur_deg) ref.segment(kBlockOffset[kTheta], 4) = *target.theta_cur_deg;

  Vec z = encode(bundle, ref, cfg.init_mask, p);
  LayerStack decoder = decoder_stack(bundle);

  ControlSolution sol;
  double best = control_loss(bundle, decoder, z, target, cfg).value;
  std::vector<double> grid = gamma_grid(cfg);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    ControlLoss at_z = control_loss(bundle, decoder, z, target, cfg);
    Vec best_z = z;  // gamma = 0 candidate keeps the trace non-increasing
    double best_loss = at_z.value;
    for (double gamma : grid) {
      Vec cand = z - gamma * at_z.grad_z;
      double loss = control_loss(bundle, decoder, cand, target, cfg).value;
      if (loss < best_loss) {
        best_loss = loss;
        best_z = cand;
      }
    }
    z = best_z;
    best = best_loss;
    sol.loss_trace.push_back(best);
  }

  sol.z_final = z;
  sol.prediction = decode(bundle, z);
  Vec4 theta = sol.prediction.segment(kBlockOffset[kTheta], 4);
  for (size_t j = 0; j < model_for_clamp.joints.size(); ++j) {
    double& v = theta[model_for_clamp.theta_index[j]];
    v = std::clamp(v, model_for_clamp.joints[j].range_min_deg,
                   model_for_clamp.joints[j].range_max_deg);
  }
  sol.theta_cmd_deg = theta;
  return sol;
}

RobotModel rigidified(const RobotModel& model) {
  RobotModel out = model;
  for (JointSpec& j : out.joints) {
    j.deflection_gain_deg_per_nm = 0.0;
    j.backlash_deg = 0.0;
  }
  out.tip_sag_mm_per_mm_nm = 0.0;
  return out;
}

IkResult geometric_ik(const RobotModel& rigid_model, const ControlTarget& target,
                      const ToolState& tool) {
  const double cog_weight = 0.1;  // sqrt of the control alpha, quadratic form
  const double damping = 1.0;
  const double fd_step = 1e-3;    // deg
  const int max_iter = 200;

  Vec4 theta;
  for (size_t j = 0; j < rigid_model.joints.size(); ++j)
    theta[rigid_model.theta_index[j]] =
        0.5 * (rigid_model.joints[j].range_min_deg + rigid_model.joints[j].range_max_deg);

  auto residual = [&](const Vec4& q) {
    Eigen::Matrix<double, 5, 1> r;
    r.head<3>() = forward_kinematics(rigid_model, q, tool) - target.x_tool_ref_mm;
    r.tail<2>() = cog_weight * (center_of_gravity(rigid_model, q, tool) - target.x_cog_ref_mm);
    return r;
  };

  IkResult out;
  for (int it = 0; it < max_iter; ++it) {
    Eigen::Matrix<double, 5, 1> r = residual(theta);
    if (r.head<3>().norm() < 0.05) break;
    Eigen::Matrix<double, 5, 4> jac;
    for (int c = 0; c < 4; ++c) {
      Vec4 qp = theta, qm = theta;
      qp[c] += fd_step;
      qm[c] -= fd_step;
      jac.col(c) = (residual(qp) - residual(qm)) / (2.0 * fd_step);
    }
    Eigen::Matrix4d h = jac.transpose() * jac + damping * Eigen::Matrix4d::Identity();
    Vec4 step = h.ldlt().solve(jac.transpose() * r);
    theta -= step;
    for (size_t j = 0; j < rigid_model.joints.size(); ++j) {
      double& v = theta[rigid_model.theta_index[j]];
      v = std::clamp(v, rigid_model.joints[j].range_min_deg,
                     rigid_model.joints[j].range_max_deg);
    }
  }
  out.theta_cmd_deg = theta;
  out.residual_mm = (forward_kinematics(rigid_model, theta, tool) - target.x_tool_ref_mm).norm();
  out.converged = out.residual_mm < 0.1;
  return out;
}

}  // namespace flexbody
