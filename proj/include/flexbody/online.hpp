#pragma once

#include <deque>
#include <optional>

#include "flexbody/robot.hpp"
#include "flexbody/wtnpb.hpp"

namespace flexbody {

struct OnlineConfig {
  // Collection thresholds per modality (theta deg, cog mm, tool mm, screen px).
  std::array<double, 4> thresholds = {10.0, 3.0, 20.0, 100.0};
  int n_thre = 5;
  int n_max = 100;
  int epochs = 5;      // momentum steps per update, full-buffer batches
  double lr = 0.01;
  double tick_hz = 5.0;
};

struct OnlineEntry {
  StateSample sample;
  ModalityMask observed;  // feasible mask actually used for input and loss
};

class OnlineBuffer {
 public:
  explicit OnlineBuffer(int capacity) : capacity_(capacity) {}

  int size() const { return int(entries_.size()); }
  int capacity() const { return capacity_; }
  const std::deque<OnlineEntry>& entries() const { return entries_; }
  const std::array<std::optional<Vec>, 4>& last_collected() const { return last_; }

  void push(const OnlineEntry& entry);

 private:
  int capacity_;
  std::deque<OnlineEntry> entries_;
  std::array<std::optional<Vec>, 4> last_;
  friend bool maybe_collect(OnlineBuffer&, const StateSample&,
                            const std::vector<ModalityMask>&, const OnlineConfig&);
};

/// Collects the sample iff any present modality moved beyond its threshold
/// since it was last collected (first observation always triggers). The
/// stored mask is the presence pattern reduced to the feasible set.
bool maybe_collect(OnlineBuffer& buffer, const StateSample& sample,
                   const std::vector<ModalityMask>& feasible, const OnlineConfig& cfg);

/// Full-buffer Momentum SGD on the parametric bias only; network weights
/// and normalizer are untouched. Returns false (no-op) below n_thre.
bool update_pb(const OnlineBuffer& buffer, const ModelBundle& bundle, Vec2& p,
               MomentumState& state, const OnlineConfig& cfg);

enum class SensorRegime { kA, kB, kC };  // A: all, B: theta+cog+screen, C: theta+cog

std::array<bool, 4> regime_pattern(SensorRegime regime);

struct OnlineTrajectory {
  std::vector<Vec2> pb;           // p after each tick (index 0 = initial)
  std::vector<int> buffer_size;   // aligned with pb, 0 for the initial entry
};

/// Drives random stable poses on the plant, streaming observations limited
/// to the regime's sensors through collect/update.
OnlineTrajectory run_online(const RobotModel& plant, const ToolState& tool,
                            SensorRegime regime, int ticks, std::uint64_t seed,
                            const ModelBundle& bundle, const Vec2& p_start,
                            const OnlineConfig& cfg, const NoiseSpec& noise,
                            double support_margin_mm = 10.0);

}  // namespace flexbody
