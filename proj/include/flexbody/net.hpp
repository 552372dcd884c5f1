#pragma once

#include <cstdint>
#include <vector>

#include "flexbody/types.hpp"

namespace flexbody {

/// Dense feed-forward stack: tanh on every hidden layer, identity output.
/// Weights are stored row-major per layer, W[l] maps dims[l] -> dims[l+1].
struct LayerStack {
  std::vector<Mat> weights;
  std::vector<Vec> biases;

  std::vector<int> dims() const;
  int num_layers() const { return int(weights.size()); }
  int input_dim() const { return int(weights.front().cols()); }
  int output_dim() const { return int(weights.back().rows()); }
};

LayerStack make_stack(const std::vector<int>& dims, std::uint64_t seed);

/// Cached pre-activations and activations of one forward pass.
/// activations[0] is the input; columns are batch samples.
struct ForwardTrace {
  std::vector<Mat> activations;  // num_layers + 1 entries
  std::vector<Mat> pre;          // num_layers entries
};

Mat forward(const LayerStack& stack, const Mat& input, ForwardTrace* trace = nullptr);
Vec forward(const LayerStack& stack, const Vec& input, ForwardTrace* trace = nullptr);

struct Gradients {
  std::vector<Mat> weights;
  std::vector<Vec> biases;
};

/// Exact backpropagation through a traced forward pass. Returns the
/// gradient with respect to the input alongside the weight gradients.
Mat backward(const LayerStack& stack, const ForwardTrace& trace, const Mat& output_grad,
             Gradients* grads = nullptr);

struct AdamState {
  std::vector<Mat> m_w, v_w;
  std::vector<Vec> m_b, v_b;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

AdamState make_adam_state(const LayerStack& stack);
void adam_step(LayerStack& stack, const Gradients& grads, AdamState& state, double lr);

/// Adam over a single free matrix (used for the parametric-bias table).
struct AdamMatState {
  Mat m, v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

AdamMatState make_adam_mat_state(const Mat& params);
void adam_step(Mat& params, const Mat& grad, AdamMatState& state, double lr);

struct MomentumState {
  Vec velocity;
  double momentum = 0.9;
};

MomentumState make_momentum_state(int dim);
void momentum_step(Vec& params, const Vec& grad, MomentumState& state, double lr);

}  // namespace flexbody
