#pragma once

// Minimal batch-mode neural network kernels used by the model module.
//
// Conventions:
//   - activations are channels-last: (N, L, C) for 1-D, (N, H, W, C) for 2-D,
//     (N, F) for fully connected, all row-major in flat float buffers
//   - conv weights are (K * C_in, C_out), tap-major then input channel
//   - linear weights are (In, Out)
//   - forward caches whatever backward needs; backward accumulates into
//     Param::grad unless asked not to
// Matrix products go through Eigen; everything else is plain loops with
// double accumulators where statistics are involved.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "samm/types.hpp"

namespace samm::nn {

enum class Mode { Train, Eval };

struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<float> value;
  std::vector<float> grad;
  std::vector<float> adam_m;
  std::vector<float> adam_v;

  Param() = default;
  Param(std::string n, std::vector<int> s);
  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0f); }
};

// Non-trainable named state (batch-norm running statistics).
struct Buffer {
  std::string name;
  std::vector<int> shape;
  std::vector<float> value;

  Buffer() = default;
  Buffer(std::string n, std::vector<int> s, float fill);
  std::size_t size() const { return value.size(); }
};

// Fan-in-scaled uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero.
void init_fanin_uniform(Param& weight, int fan_in, std::mt19937& rng);

// C(m,n) = A(m,k) * B(k,n), optionally accumulating into C. Row-major.
void gemm(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate);
// C(m,n) = A(m,k) * B(n,k)^T
void gemm_nt(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate);
// C(m,n) = A(k,m)^T * B(k,n)
void gemm_tn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate);

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

class Linear {
 public:
  Linear(const std::string& name, int in_dim, int out_dim, std::mt19937& rng);

  void forward(const float* x, float* y, int n);
  // dx may be null when input gradients are not needed.
  void backward(const float* dy, float* dx, int n, bool accumulate_params);

  int in_dim() const { return in_; }
  int out_dim() const { return out_; }
  Param weight;  // (in, out)
  Param bias;    // (out)

 private:
  int in_;
  int out_;
  std::vector<float> x_cache_;
  int cached_n_ = 0;
};

class Conv1d {
 public:
  // kernel 3, stride 1, padding 1; spatial length fixed at construction
  Conv1d(const std::string& name, int in_ch, int out_ch, int length, std::mt19937& rng);

  void forward(const float* x, float* y, int n);
  void backward(const float* dy, float* dx, int n, bool accumulate_params);

  int out_size(int n) const { return n * len_ * out_ch_; }
  Param weight;  // (3*in_ch, out_ch)
  Param bias;    // (out_ch)

 private:
  int in_ch_;
  int out_ch_;
  int len_;
  std::vector<float> col_cache_;  // (n*len, 3*in_ch)
  std::vector<float> dcol_;
  int cached_n_ = 0;
};

class Conv2d {
 public:
  Conv2d(const std::string& name, int in_ch, int out_ch, int height, int width,
         std::mt19937& rng);

  void forward(const float* x, float* y, int n);
  void backward(const float* dy, float* dx, int n, bool accumulate_params);

  int out_size(int n) const { return n * h_ * w_ * out_ch_; }
  Param weight;  // (9*in_ch, out_ch)
  Param bias;    // (out_ch)

 private:
  int in_ch_;
  int out_ch_;
  int h_;
  int w_;
  std::vector<float> col_cache_;  // (n*h*w, 9*in_ch)
  std::vector<float> dcol_;
  int cached_n_ = 0;
};

// Per-channel batch norm over (M, C) rows, M = N * spatial.
class BatchNorm {
 public:
  BatchNorm(const std::string& name, int channels);

  void forward(const float* x, float* y, int m, Mode mode);
  void backward(const float* dy, float* dx, int m, bool accumulate_params);

  int channels() const { return c_; }
  Param gamma;
  Param beta;
  Buffer running_mean;
  Buffer running_var;
  static constexpr float kMomentum = 0.1f;
  static constexpr float kEps = 1e-5f;

 private:
  int c_;
  Mode last_mode_ = Mode::Eval;
  std::vector<float> xhat_cache_;   // (m, c)
  std::vector<float> inv_std_;      // (c) for the mode used in the last forward
  int cached_m_ = 0;
};

class Relu {
 public:
  void forward(const float* x, float* y, std::size_t count);
  void backward(const float* dy, float* dx, std::size_t count) const;

 private:
  std::vector<std::uint8_t> mask_;
};

// Window 2, stride 2, floor on odd lengths.
class MaxPool1d {
 public:
  explicit MaxPool1d(int channels, int in_len);
  void forward(const float* x, float* y, int n);
  void backward(const float* dy, float* dx, int n) const;
  int out_len() const { return out_len_; }

 private:
  int c_;
  int in_len_;
  int out_len_;
  std::vector<std::int32_t> argmax_;
};

class MaxPool2d {
 public:
  MaxPool2d(int channels, int in_h, int in_w);
  void forward(const float* x, float* y, int n);
  void backward(const float* dy, float* dx, int n) const;
  int out_h() const { return out_h_; }
  int out_w() const { return out_w_; }

 private:
  int c_;
  int in_h_;
  int in_w_;
  int out_h_;
  int out_w_;
  std::vector<std::int32_t> argmax_;
};

class Sigmoid {
 public:
  void forward(const float* x, float* y, std::size_t count);
  void backward(const float* dy, float* dx, std::size_t count) const;

 private:
  std::vector<float> y_cache_;
};

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct Adam {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t t = 0;

  void step(const std::vector<Param*>& params);
};

}  // namespace samm::nn
