#pragma once

#include <optional>
#include <string>
#include <vector>

#include "flexbody/robot.hpp"
#include "flexbody/wtnpb.hpp"

namespace flexbody {

struct ToolDataset {
  ToolState tool;
  std::vector<StateSample> samples;
};

enum class CollectPolicy { kRandomConstrained, kCuratedGrid };

struct CollectConfig {
  CollectPolicy policy = CollectPolicy::kRandomConstrained;
  double support_margin_mm = 10.0;
  NoiseSpec noise;
  int curated_grid_count = 60;   // deterministic poses, surrogate-real stage
  int curated_random_count = 20;
};

/// Rejection-samples stable, camera-visible poses. Throws ConfigError when
/// the acceptance rate drops below 1%.
ToolDataset collect_dataset(const RobotModel& model, const ToolState& tool, int n,
                            const CollectConfig& cfg, std::uint64_t seed);

struct TrainConfig {
  int epochs = 1500;
  int batch = 64;
  double lr = 1e-3;
  // Std of Gaussian noise added to normalized sensor inputs (targets stay
  // clean). Keeps the decoder well-behaved off the data manifold, which the
  // latent-space controller depends on. 0 disables.
  double input_noise = 0.1;
  std::uint64_t seed = 0;
  bool fine_tune = false;  // keep W and normalizer from init, reset PBs to 0
};

struct TrainResult {
  ModelBundle bundle;
  std::vector<double> loss_history;  // per-epoch mean training loss
};

TrainResult train(const std::vector<ToolDataset>& datasets, const TrainConfig& cfg,
                  const std::optional<ModelBundle>& init = std::nullopt);

std::vector<std::pair<std::string, Vec2>> pb_table(const ModelBundle& bundle);

std::string dataset_to_jsonl(const ToolDataset& dataset);
ToolDataset dataset_from_jsonl(const std::string& text);
void save_dataset(const ToolDataset& dataset, const std::string& path);
ToolDataset load_dataset(const std::string& path);

}  // namespace flexbody
