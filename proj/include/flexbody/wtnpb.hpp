#pragma once

#include <array>
#include <string>
#include <vector>

#include "flexbody/net.hpp"
#include "flexbody/types.hpp"

namespace flexbody {

inline constexpr int kMaskDim = 4;
inline constexpr int kPbDim = 2;
inline constexpr int kInputDim = kStateDim + kMaskDim + kPbDim;  // 17
inline constexpr int kLatentDim = 8;

struct ModalityMask {
  std::array<bool, 4> bits = {false, false, false, false};

  bool operator==(const ModalityMask& o) const { return bits == o.bits; }
  int count() const;
  bool subset_of(const ModalityMask& o) const;
  std::string str() const;  // e.g. "1100"
  static ModalityMask of(bool theta, bool cog, bool tool3d, bool screen) {
    return ModalityMask{{theta, cog, tool3d, screen}};
  }
  static ModalityMask all() { return of(true, true, true, true); }
  static ModalityMask parse(const std::string& s);
};

/// The eight trained masks plus (0110), which the controller uses to
/// encode its reference sample.
std::vector<ModalityMask> feasible_mask_set();
bool mask_feasible(const ModalityMask& m, const std::vector<ModalityMask>& set);

/// Largest feasible sub-mask of an observed presence pattern; ties break on
/// most modalities, then lexicographically largest bit string. Returns a
/// zero-count mask when nothing fits.
ModalityMask reduce_to_feasible(const ModalityMask& observed,
                                const std::vector<ModalityMask>& set);

struct Normalizer {
  Vec mean = Vec::Zero(kStateDim);
  Vec std = Vec::Ones(kStateDim);

  Vec normalize(const Vec& x) const { return (x - mean).cwiseQuotient(std); }
  Vec denormalize(const Vec& xn) const { return xn.cwiseProduct(std) + mean; }
  static Normalizer fit(const Mat& samples);  // samples: kStateDim x N
};

/// Trained model: network weights, input/output normalizer, and the named
/// per-tool parametric-bias table.
struct ModelBundle {
  LayerStack stack;
  Normalizer normalizer;
  std::vector<std::string> pb_labels;
  Mat pb = Mat::Zero(0, kPbDim);  // one row per tool state
  std::vector<ModalityMask> masks = feasible_mask_set();

  int pb_index(const std::string& label) const;  // -1 when absent
  Vec2 pb_for(const std::string& label) const;
};

ModelBundle make_bundle(std::uint64_t seed,
                        const std::vector<int>& hidden = {200, 50, kLatentDim, 50, 200});

/// Normalized x with masked blocks zeroed, concatenated with the raw mask
/// bits and the parametric bias.
Vec assemble_input(const Vec& x_raw, const ModalityMask& m, const Vec2& p, const Normalizer& n);

/// Mask-aware normalized input check: every modality requested by m must be
/// present in the sample.
Vec assemble_input(const StateSample& x, const ModalityMask& m, const Vec2& p,
                   const Normalizer& n);

/// Layers from the bottleneck to the output; forward() on this sub-stack
/// reproduces the decoding half of the full network exactly.
LayerStack decoder_stack(const ModelBundle& bundle);

Vec encode(const ModelBundle& bundle, const Vec& x_raw, const ModalityMask& m, const Vec2& p);
/// Denormalized 11-dim prediction from a latent vector.
Vec decode(const ModelBundle& bundle, const Vec& z);
Vec reconstruct(const ModelBundle& bundle, const Vec& x_raw, const ModalityMask& m,
                const Vec2& p);

struct MaskedLoss {
  double value = 0.0;
  Vec grad = Vec::Zero(kStateDim);  // d loss / d prediction (normalized space)
};

/// Mean squared error over the normalized dims of the selected modalities.
MaskedLoss masked_loss(const Vec& prediction_norm, const Vec& target_norm,
                       const ModalityMask& loss_mask);

std::string bundle_to_json(const ModelBundle& bundle);
ModelBundle bundle_from_json(const std::string& json_text);
void save_bundle(const ModelBundle& bundle, const std::string& path);
ModelBundle load_bundle(const std::string& path);

}  // namespace flexbody
