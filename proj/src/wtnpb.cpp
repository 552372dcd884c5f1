#include "flexbody/wtnpb.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace flexbody {

int ModalityMask::count() const {
  int n = 0;
  for (bool b : bits) n += b;
  return n;
}

bool ModalityMask::subset_of(const ModalityMask& o) const {
  for (int i = 0; i < 4; ++i)
    if (bits[i] && !o.bits[i]) return false;
  return true;
}

std::string ModalityMask::str() const {
  std::string s;
  for (bool b : bits) s += b ? '1' : '0';
  return s;
}

ModalityMask ModalityMask::parse(const std::string& s) {
  if (s.size() != 4) throw std::invalid_argument("mask string must have 4 bits");
  ModalityMask m;
  for (int i = 0; i < 4; ++i) {
    if (s[i] != '0' && s[i] != '1')
      throw std::invalid_argument("mask string must contain only 0/1: " + s);
    m.bits[i] = s[i] == '1';
  }
  return m;
}

std::vector<ModalityMask> feasible_mask_set() {
  std::vector<ModalityMask> set;
  for (const char* s : {"1000", "1100", "1010", "1001", "1110", "1101", "1011", "0111", "0110"})
    set.push_back(ModalityMask::parse(s));
  return set;
}

bool mask_feasible(const ModalityMask& m, const std::vector<ModalityMask>& set) {
  return std::find(set.begin(), set.end(), m) != set.end();
}

ModalityMask reduce_to_feasible(const ModalityMask& observed,
                                const std::vector<ModalityMask>& set) {
  ModalityMask best;
  bool found = false;
  for (const ModalityMask& m : set) {
    if (!m.subset_of(observed)) continue;
    if (!found || m.count() > best.count() ||
        (m.count() == best.count() && m.str() > best.str())) {
      best = m;
      found = true;
    }
  }
  return best;
}

Normalizer Normalizer::fit(const Mat& samples) {
  if (samples.rows() != kStateDim || samples.cols() < 2)
    throw std::invalid_argument("Normalizer::fit: need kStateDim x N, N >= 2");
  Normalizer n;
  n.mean = samples.rowwise().mean();
  Mat centered = samples.colwise() - n.mean;
  n.std = (centered.array().square().rowwise().mean()).sqrt();
  for (int i = 0; i < kStateDim; ++i)
    if (n.std[i] <= 1e-12)
      throw ConfigError("degenerate training set: zero variance in sensor dim " +
                        std::to_string(i));
  return n;
}

int ModelBundle::pb_index(const std::string& label) const {
  for (size_t i = 0; i < pb_labels.size(); ++i)
    if (pb_labels[i] == label) return int(i);
  return -1;
}

Vec2 ModelBundle::pb_for(const std::string& label) const {
  int i = pb_index(label);
  if (i < 0) throw std::invalid_argument("no parametric bias for label " + label);
  return pb.row(i).transpose();
}

ModelBundle make_bundle(std::uint64_t seed, const std::vector<int>& hidden) {
  ModelBundle b;
  std::vector<int> dims;
  dims.push_back(kInputDim);
  for (int h : hidden) dims.push_back(h);
  dims.push_back(kStateDim);
  b.stack = make_stack(dims, seed);
  return b;
}

Vec assemble_input(const Vec& x_raw, const ModalityMask& m, const Vec2& p,
                   const Normalizer& n) {
  Vec xn = n.normalize(x_raw);
  for (int i = 0; i < kNumModalities; ++i)
    if (!m.bits[i]) xn.segment(kBlockOffset[i], kBlockSize[i]).setZero();
  Vec input(kInputDim);
  input.head(kStateDim) = xn;
  for (int i = 0; i < kMaskDim; ++i) input[kStateDim + i] = m.bits[i] ? 1.0 : 0.0;
  input.tail(kPbDim) = p;
  return input;
}

Vec assemble_input(const StateSample& x, const ModalityMask& m, const Vec2& p,
                   const Normalizer& n) {
  for (int i = 0; i < kNumModalities; ++i)
    if (m.bits[i] && !x.present[i])
      throw std::invalid_argument("mask requests absent modality " + std::to_string(i));
  return assemble_input(x.to_vector(), m, p, n);
}

LayerStack decoder_stack(const ModelBundle& bundle) {
  const int n = bundle.stack.num_layers();
  const int half = n / 2;
  LayerStack dec;
  dec.weights.assign(bundle.stack.weights.begin() + half, bundle.stack.weights.end());
  dec.biases.assign(bundle.stack.biases.begin() + half, bundle.stack.biases.end());
  return dec;
}

Vec encode(const ModelBundle& bundle, const Vec& x_raw, const ModalityMask& m, const Vec2& p) {
  Vec a = assemble_input(x_raw, m, p, bundle.normalizer);
  const int half = bundle.stack.num_layers() / 2;
  for (int l = 0; l < half; ++l)
    a = ((bundle.stack.weights[l] * a + bundle.stack.biases[l]).array().tanh()).matrix();
  return a;
}

Vec decode(const ModelBundle& bundle, const Vec& z) {
  return bundle.normalizer.denormalize(forward(decoder_stack(bundle), z));
}

Vec reconstruct(const ModelBundle& bundle, const Vec& x_raw, const ModalityMask& m,
                const Vec2& p) {
  return bundle.normalizer.denormalize(forward(bundle.stack, assemble_input(x_raw, m, p, bundle.normalizer)));
}

MaskedLoss masked_loss(const Vec& prediction_norm, const Vec& target_norm,
                       const ModalityMask& loss_mask) {
  if (loss_mask.count() == 0) throw std::invalid_argument("masked_loss: empty loss mask");
  int n_sel = 0;
  for (int i = 0; i < kNumModalities; ++i)
    if (loss_mask.bits[i]) n_sel += kBlockSize[i];
  MaskedLoss out;
  for (int i = 0; i < kNumModalities; ++i) {
    if (!loss_mask.bits[i]) continue;
    auto diff = prediction_norm.segment(kBlockOffset[i], kBlockSize[i]) -
                target_norm.segment(kBlockOffset[i], kBlockSize[i]);
    out.value += diff.squaredNorm();
    out.grad.segment(kBlockOffset[i], kBlockSize[i]) = 2.0 * diff / double(n_sel);
  }
  out.value /= double(n_sel);
  return out;
}

namespace {

using nlohmann::json;

json mat_to_json(const Mat& m) {
  json rows = json::array();
  for (int r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Mat mat_from_json(const json& j) {
  if (j.empty()) return Mat(0, 0);
  Mat m(j.size(), j[0].size());
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) m(r, c) = j[r][c];
  return m;
}

json vec_to_json(const Vec& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Vec vec_from_json(const json& j) {
  Vec v(j.size());
  for (int i = 0; i < v.size(); ++i) v[i] = j[i];
  return v;
}

}  // namespace

std::string bundle_to_json(const ModelBundle& bundle) {
  json j;
  j["dims"] = bundle.stack.dims();
  json layers = json::array();
  for (int l = 0; l < bundle.stack.num_layers(); ++l)
    layers.push_back({{"weight", mat_to_json(bundle.stack.weights[l])},
                      {"bias", vec_to_json(bundle.stack.biases[l])}});
  j["layers"] = std::move(layers);
  j["normalizer"] = {{"mean", vec_to_json(bundle.normalizer.mean)},
                     {"std", vec_to_json(bundle.normalizer.std)}};
  j["pb_labels"] = bundle.pb_labels;
  j["pb"] = mat_to_json(bundle.pb);
  json masks = json::array();
  for (const ModalityMask& m : bundle.masks) masks.push_back(m.str());
  j["masks"] = std::move(masks);
  return j.dump();
}

ModelBundle bundle_from_json(const std::string& json_text) {
  json j = json::parse(json_text);
  ModelBundle b;
  b.stack.weights.clear();
  b.stack.biases.clear();
  for (const json& jl : j.at("layers")) {
    b.stack.weights.push_back(mat_from_json(jl.at("weight")));
    b.stack.biases.push_back(vec_from_json(jl.at("bias")));
  }
  std::vector<int> dims = j.at("dims").get<std::vector<int>>();
  if (dims != b.stack.dims()) throw ConfigError("bundle dims header disagrees with matrices");
  b.normalizer.mean = vec_from_json(j.at("normalizer").at("mean"));
  b.normalizer.std = vec_from_json(j.at("normalizer").at("std"));
  b.pb_labels = j.at("pb_labels").get<std::vector<std::string>>();
  b.pb = mat_from_json(j.at("pb"));
  if (b.pb.rows() == 0) b.pb = Mat::Zero(0, kPbDim);
  b.masks.clear();
  for (const json& jm : j.at("masks")) b.masks.push_back(ModalityMask::parse(jm));
  return b;
}

void save_bundle(const ModelBundle& bundle, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write bundle: " + path);
  f << bundle_to_json(bundle);
}

ModelBundle load_bundle(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read bundle: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return bundle_from_json(ss.str());
}

}  // namespace flexbody
