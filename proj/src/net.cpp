#include "flexbody/net.hpp"

#include <cmath>
#include <random>

namespace flexbody {

std::vector<int> LayerStack::dims() const {
  std::vector<int> d;
  d.push_back(input_dim());
  for (const Mat& w : weights) d.push_back(int(w.rows()));
  return d;
}

LayerStack make_stack(const std::vector<int>& dims, std::uint64_t seed) {
  if (dims.size() < 2) throw std::invalid_argument("make_stack: need at least two dims");
  LayerStack stack;
  std::mt19937_64 rng(seed);
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    double limit = std::sqrt(6.0 / double(dims[l] + dims[l + 1]));
    std::uniform_real_distribution<double> u(-limit, limit);
    Mat w(dims[l + 1], dims[l]);
    for (int r = 0; r < w.rows(); ++r)
      for (int c = 0; c < w.cols(); ++c) w(r, c) = u(rng);
    stack.weights.push_back(std::move(w));
    stack.biases.push_back(Vec::Zero(dims[l + 1]));
  }
  return stack;
}

Mat forward(const LayerStack& stack, const Mat& input, ForwardTrace* trace) {
  if (input.rows() != stack.input_dim())
    throw std::invalid_argument("forward: input dim mismatch");
  if (trace) {
    trace->activations.assign(1, input);
    trace->pre.clear();
  }
  Mat a = input;
  const int n = stack.num_layers();
  for (int l = 0; l < n; ++l) {
    Mat z = (stack.weights[l] * a).colwise() + stack.biases[l];
    a = (l + 1 < n) ? z.array().tanh().matrix() : z;
    if (trace) {
      trace->pre.push_back(z);
      trace->activations.push_back(a);
    }
  }
  return a;
}

Vec forward(const LayerStack& stack, const Vec& input, ForwardTrace* trace) {
  return forward(stack, Mat(input), trace).col(0);
}

Mat backward(const LayerStack& stack, const ForwardTrace& trace, const Mat& output_grad,
             Gradients* grads) {
  const int n = stack.num_layers();
  if (int(trace.activations.size()) != n + 1)
    throw std::invalid_argument("backward: trace does not match stack");
  if (output_grad.rows() != stack.output_dim() ||
      output_grad.cols() != trace.activations.back().cols())
    throw std::invalid_argument("backward: output_grad shape mismatch");
  if (grads) {
    grads->weights.assign(n, Mat());
    grads->biases.assign(n, Vec());
  }
  Mat delta = output_grad;  // output layer is linear
  for (int l = n - 1; l >= 0; --l) {
    if (grads) {
      grads->weights[l] = delta * trace.activations[l].transpose();
      grads->biases[l] = delta.rowwise().sum();
    }
    delta = stack.weights[l].transpose() * delta;
    if (l > 0) {
      // d tanh(z) = 1 - tanh(z)^2, and activations[l] already holds tanh(z)
      delta.array() *= 1.0 - trace.activations[l].array().square();
    }
  }
  return delta;
}

AdamState make_adam_state(const LayerStack& stack) {
  AdamState s;
  for (const Mat& w : stack.weights) {
    s.m_w.push_back(Mat::Zero(w.rows(), w.cols()));
    s.v_w.push_back(Mat::Zero(w.rows(), w.cols()));
  }
  for (const Vec& b : stack.biases) {
    s.m_b.push_back(Vec::Zero(b.size()));
    s.v_b.push_back(Vec::Zero(b.size()));
  }
  return s;
}

namespace {

template <typename T>
void adam_update(T& param, const T& grad, T& m, T& v, long t, double lr, double b1, double b2,
                 double eps) {
  m = b1 * m + (1.0 - b1) * grad;
  v = b2 * v.array().matrix() + (1.0 - b2) * grad.array().square().matrix();
  double corr1 = 1.0 - std::pow(b1, double(t));
  double corr2 = 1.0 - std::pow(b2, double(t));
  param.array() -= lr * (m.array() / corr1) / ((v.array() / corr2).sqrt() + eps);
}

}  // namespace

void adam_step(LayerStack& stack, const Gradients& grads, AdamState& state, double lr) {
  ++state.step;
  for (int l = 0; l < stack.num_layers(); ++l) {
    adam_update(stack.weights[l], grads.weights[l], state.m_w[l], state.v_w[l], state.step, lr,
                state.beta1, state.beta2, state.eps);
    adam_update(stack.biases[l], grads.biases[l], state.m_b[l], state.v_b[l], state.step, lr,
                state.beta1, state.beta2, state.eps);
  }
}

AdamMatState make_adam_mat_state(const Mat& params) {
  AdamMatState s;
  s.m = Mat::Zero(params.rows(), params.cols());
  s.v = Mat::Zero(params.rows(), params.cols());
  return s;
}

void adam_step(Mat& params, const Mat& grad, AdamMatState& state, double lr) {
  ++state.step;
  adam_update(params, grad, state.m, state.v, state.step, lr, state.beta1, state.beta2,
              state.eps);
}

MomentumState make_momentum_state(int dim) {
  MomentumState s;
  s.velocity = Vec::Zero(dim);
  return s;
}

void momentum_step(Vec& params, const Vec& grad, MomentumState& state, double lr) {
  state.velocity = state.momentum * state.velocity - lr * grad;
  params += state.velocity;
}

}  // namespace flexbody
