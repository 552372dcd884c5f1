#include "flexbody/online.hpp"

#include <random>

namespace flexbody {

namespace {

Vec modality_block(const StateSample& s, int i) {
  Vec x = s.to_vector();
  return x.segment(kBlockOffset[i], kBlockSize[i]);
}

}  // namespace

void OnlineBuffer::push(const OnlineEntry& entry) {
  entries_.push_back(entry);
  while (int(entries_.size()) > capacity_) entries_.pop_front();
}

bool maybe_collect(OnlineBuffer& buffer, const StateSample& sample,
                   const std::vector<ModalityMask>& feasible, const OnlineConfig& cfg) {
  bool trigger = false;
  for (int i = 0; i < kNumModalities; ++i) {
    if (!sample.present[i]) continue;
    if (!buffer.last_[i].has_value() ||
        (modality_block(sample, i) - *buffer.last_[i]).norm() > cfg.thresholds[i]) {
      trigger = true;
      break;
    }
  }
  if (!trigger) return false;

  ModalityMask present =
      ModalityMask{{sample.present[0], sample.present[1], sample.present[2], sample.present[3]}};
  ModalityMask observed = mask_feasible(present, feasible)
                              ? present
                              : reduce_to_feasible(present, feasible);
  if (observed.count() == 0) return false;

  buffer.push(OnlineEntry{sample, observed});
  for (int i = 0; i < kNumModalities; ++i)
    if (sample.present[i]) buffer.last_[i] = modality_block(sample, i);
  return true;
}

bool update_pb(const OnlineBuffer& buffer, const ModelBundle& bundle, Vec2& p,
               MomentumState& state, const OnlineConfig& cfg) {
  if (buffer.size() < cfg.n_thre) return false;
  Vec pv = p;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Vec2 grad = Vec2::Zero();
    for (const OnlineEntry& e : buffer.entries()) {
      Vec input = assemble_input(e.sample.to_vector(), e.observed, Vec2(pv.head<2>()),
                                 bundle.normalizer);
      ForwardTrace trace;
      Vec pred = forward(bundle.stack, input, &trace);
      Vec target = bundle.normalizer.normalize(e.sample.to_vector());
      MaskedLoss loss = masked_loss(pred, target, e.observed);
      Mat input_grad = backward(bundle.stack, trace, Mat(loss.grad));
      grad += input_grad.col(0).tail(kPbDim);
    }
    grad /= double(buffer.size());
    momentum_step(pv, Vec(grad), state, cfg.lr);
  }
  p = pv.head<2>();
  return true;
}

std::array<bool, 4> regime_pattern(SensorRegime regime) {
  switch (regime) {
    case SensorRegime::kA: return {true, true, true, true};
    case SensorRegime::kB: return {true, true, false, true};
    case SensorRegime::kC: return {true, true, false, false};
  }
  return {true, true, false, false};
}

OnlineTrajectory run_online(const RobotModel& plant, const ToolState& tool,
                            SensorRegime regime, int ticks, std::uint64_t seed,
                            const ModelBundle& bundle, const Vec2& p_start,
                            const OnlineConfig& cfg, const NoiseSpec& noise,
                            double support_margin_mm) {
  std::mt19937_64 rng(seed);
  OnlineBuffer buffer(cfg.n_max);
  Vec2 p = p_start;
  MomentumState mstate = make_momentum_state(kPbDim);
  OnlineTrajectory traj;
  traj.pb.push_back(p);
  traj.buffer_size.push_back(0);
  std::array<bool, 4> pattern = regime_pattern(regime);

  int produced = 0;
  long attempts = 0;
  while (produced < ticks) {
    if (++attempts > 200L * std::max(ticks, 1) + 1000)
      throw ConfigError("run_online: cannot find stable poses");
    Vec4 theta;
    for (size_t j = 0; j < plant.joints.size(); ++j) {
      std::uniform_real_distribution<double> u(plant.joints[j].range_min_deg,
                                               plant.joints[j].range_max_deg);
      theta[plant.theta_index[j]] = u(rng);
    }
    StateSample sample;
    try {
      Vec4 theta_act = deflected_angles(plant, theta, tool);
      Vec2 cog = center_of_gravity(plant, theta_act, tool);
      if (!inside_support_polygon(plant, cog, support_margin_mm)) continue;
      sample = observe(plant, theta, tool, noise, rng);
    } catch (const std::runtime_error&) {
      continue;
    }
    // Sensor regime limits what the robot can perceive this tick.
    for (int i = 0; i < kNumModalities; ++i) sample.present[i] = sample.present[i] && pattern[i];
    if (maybe_collect(buffer, sample, bundle.masks, cfg))
      update_pb(buffer, bundle, p, mstate, cfg);
    traj.pb.push_back(p);
    traj.buffer_size.push_back(buffer.size());
    ++produced;
  }
  return traj;
}

}  // namespace flexbody
