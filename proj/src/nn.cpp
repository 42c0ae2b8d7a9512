#include "samm/nn.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace samm::nn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConst = Eigen::Map<const RowMat>;

std::size_t shape_count(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

}  // namespace

Param::Param(std::string n, std::vector<int> s) : name(std::move(n)), shape(std::move(s)) {
  const std::size_t count = shape_count(shape);
  value.assign(count, 0.0f);
  grad.assign(count, 0.0f);
  adam_m.assign(count, 0.0f);
  adam_v.assign(count, 0.0f);
}

Buffer::Buffer(std::string n, std::vector<int> s, float fill) : name(std::move(n)), shape(std::move(s)) {
  value.assign(shape_count(shape), fill);
}

void init_fanin_uniform(Param& weight, int fan_in, std::mt19937& rng) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (auto& w : weight.value) w = dist(rng);
}

void gemm(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
  MapConst ma(a, m, k);
  MapConst mb(b, k, n);
  MapMat mc(c, m, n);
  if (accumulate)
    mc.noalias() += ma * mb;
  else
    mc.noalias() = ma * mb;
}

void gemm_nt(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
  MapConst ma(a, m, k);
  MapConst mb(b, n, k);
  MapMat mc(c, m, n);
  if (accumulate)
    mc.noalias() += ma * mb.transpose();
  else
    mc.noalias() = ma * mb.transpose();
}

void gemm_tn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
  MapConst ma(a, k, m);
  MapConst mb(b, k, n);
  MapMat mc(c, m, n);
  if (accumulate)
    mc.noalias() += ma.transpose() * mb;
  else
    mc.noalias() = ma.transpose() * mb;
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

Linear::Linear(const std::string& name, int in_dim, int out_dim, std::mt19937& rng)
    : weight(name + ".weight", {in_dim, out_dim}),
      bias(name + ".bias", {out_dim}),
      in_(in_dim),
      out_(out_dim) {
  init_fanin_uniform(weight, in_dim, rng);
}

void Linear::forward(const float* x, float* y, int n) {
  cached_n_ = n;
  x_cache_.assign(x, x + static_cast<std::size_t>(n) * in_);
  gemm(x, weight.value.data(), y, n, in_, out_, false);
  for (int i = 0; i < n; ++i) {
    float* row = y + static_cast<std::size_t>(i) * out_;
    for (int j = 0; j < out_; ++j) row[j] += bias.value[j];
  }
}

void Linear::backward(const float* dy, float* dx, int n, bool accumulate_params) {
  if (accumulate_params) {
    gemm_tn(x_cache_.data(), dy, weight.grad.data(), in_, n, out_, true);
    for (int i = 0; i < n; ++i) {
      const float* row = dy + static_cast<std::size_t>(i) * out_;
      for (int j = 0; j < out_; ++j) bias.grad[j] += row[j];
    }
  }
  if (dx != nullptr) gemm_nt(dy, weight.value.data(), dx, n, out_, in_, false);
}

// ---------------------------------------------------------------------------
// Conv1d (kernel 3, stride 1, padding 1)
// ---------------------------------------------------------------------------

Conv1d::Conv1d(const std::string& name, int in_ch, int out_ch, int length, std::mt19937& rng)
    : weight(name + ".weight", {3 * in_ch, out_ch}),
      bias(name + ".bias", {out_ch}),
      in_ch_(in_ch),
      out_ch_(out_ch),
      len_(length) {
  init_fanin_uniform(weight, 3 * in_ch, rng);
}

void Conv1d::forward(const float* x, float* y, int n) {
  cached_n_ = n;
  const int cols = 3 * in_ch_;
  const std::size_t rows = static_cast<std::size_t>(n) * len_;
  col_cache_.assign(rows * cols, 0.0f);
  for (int i = 0; i < n; ++i) {
    const float* xs = x + static_cast<std::size_t>(i) * len_ * in_ch_;
    for (int l = 0; l < len_; ++l) {
      float* row = col_cache_.data() + (static_cast<std::size_t>(i) * len_ + l) * cols;
      for (int tap = 0; tap < 3; ++tap) {
        const int src = l + tap - 1;
        if (src < 0 || src >= len_) continue;
        std::memcpy(row + tap * in_ch_, xs + static_cast<std::size_t>(src) * in_ch_,
                    sizeof(float) * in_ch_);
      }
    }
  }
  gemm(col_cache_.data(), weight.value.data(), y, static_cast<int>(rows), cols, out_ch_, false);
  for (std::size_t r = 0; r < rows; ++r) {
    float* row = y + r * out_ch_;
    for (int j = 0; j < out_ch_; ++j) row[j] += bias.value[j];
  }
}

void Conv1d::backward(const float* dy, float* dx, int n, bool accumulate_params) {
  const int cols = 3 * in_ch_;
  const std::size_t rows = static_cast<std::size_t>(n) * len_;
  if (accumulate_params) {
    gemm_tn(col_cache_.data(), dy, weight.grad.data(), cols, static_cast<int>(rows), out_ch_, true);
    for (std::size_t r = 0; r < rows; ++r) {
      const float* row = dy + r * out_ch_;
      for (int j = 0; j < out_ch_; ++j) bias.grad[j] += row[j];
    }
  }
  if (dx == nullptr) return;
  dcol_.resize(rows * cols);
  gemm_nt(dy, weight.value.data(), dcol_.data(), static_cast<int>(rows), out_ch_, cols, false);
  std::fill(dx, dx + rows * in_ch_, 0.0f);
  for (int i = 0; i < n; ++i) {
    float* dxs = dx + static_cast<std::size_t>(i) * len_ * in_ch_;
    for (int l = 0; l < len_; ++l) {
      const float* row = dcol_.data() + (static_cast<std::size_t>(i) * len_ + l) * cols;
      for (int tap = 0; tap < 3; ++tap) {
        const int src = l + tap - 1;
        if (src < 0 || src >= len_) continue;
        float* dst = dxs + static_cast<std::size_t>(src) * in_ch_;
        const float* s = row + tap * in_ch_;
        for (int c = 0; c < in_ch_; ++c) dst[c] += s[c];
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Conv2d (kernel 3x3, stride 1, padding 1)
// ---------------------------------------------------------------------------

Conv2d::Conv2d(const std::string& name, int in_ch, int out_ch, int height, int width,
               std::mt19937& rng)
    : weight(name + ".weight", {9 * in_ch, out_ch}),
      bias(name + ".bias", {out_ch}),
      in_ch_(in_ch),
      out_ch_(out_ch),
      h_(height),
      w_(width) {
  init_fanin_uniform(weight, 9 * in_ch, rng);
}

void Conv2d::forward(const float* x, float* y, int n) {
  cached_n_ = n;
  const int cols = 9 * in_ch_;
  const std::size_t plane = static_cast<std::size_t>(h_) * w_;
  const std::size_t rows = static_cast<std::size_t>(n) * plane;
  col_cache_.assign(rows * cols, 0.0f);
  for (int i = 0; i < n; ++i) {
    const float* xs = x + static_cast<std::size_t>(i) * plane * in_ch_;
    for (int r = 0; r < h_; ++r) {
      for (int c = 0; c < w_; ++c) {
        float* row = col_cache_.data() + (static_cast<std::size_t>(i) * plane + r * w_ + c) * cols;
        int tap = 0;
        for (int dh = -1; dh <= 1; ++dh) {
          for (int dw = -1; dw <= 1; ++dw, ++tap) {
            const int sr = r + dh;
            const int sc = c + dw;
            if (sr < 0 || sr >= h_ || sc < 0 || sc >= w_) continue;
            std::memcpy(row + tap * in_ch_,
                        xs + (static_cast<std::size_t>(sr) * w_ + sc) * in_ch_,
                        sizeof(float) * in_ch_);
          }
        }
      }
    }
  }
  gemm(col_cache_.data(), weight.value.data(), y, static_cast<int>(rows), cols, out_ch_, false);
  for (std::size_t r = 0; r < rows; ++r) {
    float* row = y + r * out_ch_;
    for (int j = 0; j < out_ch_; ++j) row[j] += bias.value[j];
  }
}

void Conv2d::backward(const float* dy, float* dx, int n, bool accumulate_params) {
  const int cols = 9 * in_ch_;
  const std::size_t plane = static_cast<std::size_t>(h_) * w_;
  const std::size_t rows = static_cast<std::size_t>(n) * plane;
  if (accumulate_params) {
    gemm_tn(col_cache_.data(), dy, weight.grad.data(), cols, static_cast<int>(rows), out_ch_, true);
    for (std::size_t r = 0; r < rows; ++r) {
      const float* row = dy + r * out_ch_;
      for (int j = 0; j < out_ch_; ++j) bias.grad[j] += row[j];
    }
  }
  if (dx == nullptr) return;
  dcol_.resize(rows * cols);
  gemm_nt(dy, weight.value.data(), dcol_.data(), static_cast<int>(rows), out_ch_, cols, false);
  std::fill(dx, dx + rows * in_ch_, 0.0f);
  for (int i = 0; i < n; ++i) {
    float* dxs = dx + static_cast<std::size_t>(i) * plane * in_ch_;
    for (int r = 0; r < h_; ++r) {
      for (int c = 0; c < w_; ++c) {
        const float* row = dcol_.data() + (static_cast<std::size_t>(i) * plane + r * w_ + c) * cols;
        int tap = 0;
        for (int dh = -1; dh <= 1; ++dh) {
          for (int dw = -1; dw <= 1; ++dw, ++tap) {
            const int sr = r + dh;
            const int sc = c + dw;
            if (sr < 0 || sr >= h_ || sc < 0 || sc >= w_) continue;
            float* dst = dxs + (static_cast<std::size_t>(sr) * w_ + sc) * in_ch_;
            const float* s = row + tap * in_ch_;
            for (int ch = 0; ch < in_ch_; ++ch) dst[ch] += s[ch];
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// BatchNorm
// ---------------------------------------------------------------------------

BatchNorm::BatchNorm(const std::string& name, int channels)
    : gamma(name + ".gamma", {channels}),
      beta(name + ".beta", {channels}),
      running_mean(name + ".running_mean", {channels}, 0.0f),
      running_var(name + ".running_var", {channels}, 1.0f),
      c_(channels) {
  std::fill(gamma.value.begin(), gamma.value.end(), 1.0f);
}

void BatchNorm::forward(const float* x, float* y, int m, Mode mode) {
  last_mode_ = mode;
  cached_m_ = m;
  xhat_cache_.resize(static_cast<std::size_t>(m) * c_);
  inv_std_.resize(c_);
  std::vector<float> mean(c_);

  if (mode == Mode::Train) {
    if (m < 2) throw ArgumentError("batch norm: train mode needs at least 2 rows, got " +
                                   std::to_string(m));
    std::vector<double> sum(c_, 0.0), sq(c_, 0.0);
    for (int i = 0; i < m; ++i) {
      const float* row = x + static_cast<std::size_t>(i) * c_;
      for (int c = 0; c < c_; ++c) sum[c] += row[c];
    }
    for (int c = 0; c < c_; ++c) mean[c] = static_cast<float>(sum[c] / m);
    for (int i = 0; i < m; ++i) {
      const float* row = x + static_cast<std::size_t>(i) * c_;
      for (int c = 0; c < c_; ++c) {
        const double d = row[c] - mean[c];
        sq[c] += d * d;
      }
    }
    for (int c = 0; c < c_; ++c) {
      const double var = sq[c] / m;
      inv_std_[c] = static_cast<float>(1.0 / std::sqrt(var + kEps));
      running_mean.value[c] = (1.0f - kMomentum) * running_mean.value[c] + kMomentum * mean[c];
      const double unbiased = sq[c] / (m - 1);
      running_var.value[c] =
          (1.0f - kMomentum) * running_var.value[c] + kMomentum * static_cast<float>(unbiased);
    }
  } else {
    for (int c = 0; c < c_; ++c) {
      mean[c] = running_mean.value[c];
      inv_std_[c] = static_cast<float>(1.0 / std::sqrt(static_cast<double>(running_var.value[c]) + kEps));
    }
  }

  for (int i = 0; i < m; ++i) {
    const float* row = x + static_cast<std::size_t>(i) * c_;
    float* xh = xhat_cache_.data() + static_cast<std::size_t>(i) * c_;
    float* out = y + static_cast<std::size_t>(i) * c_;
    for (int c = 0; c < c_; ++c) {
      xh[c] = (row[c] - mean[c]) * inv_std_[c];
      out[c] = gamma.value[c] * xh[c] + beta.value[c];
    }
  }
}

void BatchNorm::backward(const float* dy, float* dx, int m, bool accumulate_params) {
  std::vector<double> sum_dy(c_, 0.0), sum_dy_xhat(c_, 0.0);
  for (int i = 0; i < m; ++i) {
    const float* row = dy + static_cast<std::size_t>(i) * c_;
    const float* xh = xhat_cache_.data() + static_cast<std::size_t>(i) * c_;
    for (int c = 0; c < c_; ++c) {
      sum_dy[c] += row[c];
      sum_dy_xhat[c] += static_cast<double>(row[c]) * xh[c];
    }
  }
  if (accumulate_params) {
    for (int c = 0; c < c_; ++c) {
      beta.grad[c] += static_cast<float>(sum_dy[c]);
      gamma.grad[c] += static_cast<float>(sum_dy_xhat[c]);
    }
  }
  if (dx == nullptr) return;

  if (last_mode_ == Mode::Train) {
    std::vector<float> mean_dy(c_), mean_dy_xhat(c_);
    for (int c = 0; c < c_; ++c) {
      mean_dy[c] = static_cast<float>(sum_dy[c] / m);
      mean_dy_xhat[c] = static_cast<float>(sum_dy_xhat[c] / m);
    }
    for (int i = 0; i < m; ++i) {
      const float* row = dy + static_cast<std::size_t>(i) * c_;
      const float* xh = xhat_cache_.data() + static_cast<std::size_t>(i) * c_;
      float* out = dx + static_cast<std::size_t>(i) * c_;
      for (int c = 0; c < c_; ++c) {
        out[c] = gamma.value[c] * inv_std_[c] * (row[c] - mean_dy[c] - xh[c] * mean_dy_xhat[c]);
      }
    }
  } else {
    for (int i = 0; i < m; ++i) {
      const float* row = dy + static_cast<std::size_t>(i) * c_;
      float* out = dx + static_cast<std::size_t>(i) * c_;
      for (int c = 0; c < c_; ++c) out[c] = row[c] * gamma.value[c] * inv_std_[c];
    }
  }
}

// ---------------------------------------------------------------------------
// Relu / pooling / sigmoid
// ---------------------------------------------------------------------------

void Relu::forward(const float* x, float* y, std::size_t count) {
  mask_.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const bool on = x[i] > 0.0f;
    mask_[i] = on;
    y[i] = on ? x[i] : 0.0f;
  }
}

void Relu::backward(const float* dy, float* dx, std::size_t count) const {
  for (std::size_t i = 0; i < count; ++i) dx[i] = mask_[i] ? dy[i] : 0.0f;
}

MaxPool1d::MaxPool1d(int channels, int in_len) : c_(channels), in_len_(in_len), out_len_(in_len / 2) {}

void MaxPool1d::forward(const float* x, float* y, int n) {
  argmax_.resize(static_cast<std::size_t>(n) * out_len_ * c_);
  for (int i = 0; i < n; ++i) {
    const float* xs = x + static_cast<std::size_t>(i) * in_len_ * c_;
    for (int l = 0; l < out_len_; ++l) {
      const float* a = xs + static_cast<std::size_t>(2 * l) * c_;
      const float* b = a + c_;
      float* out = y + (static_cast<std::size_t>(i) * out_len_ + l) * c_;
      std::int32_t* am = argmax_.data() + (static_cast<std::size_t>(i) * out_len_ + l) * c_;
      for (int c = 0; c < c_; ++c) {
        if (b[c] > a[c]) {
          out[c] = b[c];
          am[c] = 2 * l + 1;
        } else {
          out[c] = a[c];
          am[c] = 2 * l;
        }
      }
    }
  }
}

void MaxPool1d::backward(const float* dy, float* dx, int n) const {
  std::fill(dx, dx + static_cast<std::size_t>(n) * in_len_ * c_, 0.0f);
  for (int i = 0; i < n; ++i) {
    float* dxs = dx + static_cast<std::size_t>(i) * in_len_ * c_;
    for (int l = 0; l < out_len_; ++l) {
      const float* row = dy + (static_cast<std::size_t>(i) * out_len_ + l) * c_;
      const std::int32_t* am = argmax_.data() + (static_cast<std::size_t>(i) * out_len_ + l) * c_;
      for (int c = 0; c < c_; ++c) dxs[static_cast<std::size_t>(am[c]) * c_ + c] += row[c];
    }
  }
}

MaxPool2d::MaxPool2d(int channels, int in_h, int in_w)
    : c_(channels), in_h_(in_h), in_w_(in_w), out_h_(in_h / 2), out_w_(in_w / 2) {}

void MaxPool2d::forward(const float* x, float* y, int n) {
  const std::size_t out_plane = static_cast<std::size_t>(out_h_) * out_w_;
  argmax_.resize(static_cast<std::size_t>(n) * out_plane * c_);
  for (int i = 0; i < n; ++i) {
    const float* xs = x + static_cast<std::size_t>(i) * in_h_ * in_w_ * c_;
    for (int r = 0; r < out_h_; ++r) {
      for (int cc = 0; cc < out_w_; ++cc) {
        float* out = y + ((static_cast<std::size_t>(i) * out_h_ + r) * out_w_ + cc) * c_;
        std::int32_t* am =
            argmax_.data() + ((static_cast<std::size_t>(i) * out_h_ + r) * out_w_ + cc) * c_;
        for (int c = 0; c < c_; ++c) {
          float best = -std::numeric_limits<float>::infinity();
          std::int32_t best_idx = 0;
          for (int dr = 0; dr < 2; ++dr) {
            for (int dc = 0; dc < 2; ++dc) {
              const int sr = 2 * r + dr;
              const int sc = 2 * cc + dc;
              const float v = xs[(static_cast<std::size_t>(sr) * in_w_ + sc) * c_ + c];
              if (v > best) {
                best = v;
                best_idx = sr * in_w_ + sc;
              }
            }
          }
          out[c] = best;
          am[c] = best_idx;
        }
      }
    }
  }
}

void MaxPool2d::backward(const float* dy, float* dx, int n) const {
  const std::size_t out_plane = static_cast<std::size_t>(out_h_) * out_w_;
  std::fill(dx, dx + static_cast<std::size_t>(n) * in_h_ * in_w_ * c_, 0.0f);
  for (int i = 0; i < n; ++i) {
    float* dxs = dx + static_cast<std::size_t>(i) * in_h_ * in_w_ * c_;
    for (std::size_t p = 0; p < out_plane; ++p) {
      const float* row = dy + (static_cast<std::size_t>(i) * out_plane + p) * c_;
      const std::int32_t* am = argmax_.data() + (static_cast<std::size_t>(i) * out_plane + p) * c_;
      for (int c = 0; c < c_; ++c) dxs[static_cast<std::size_t>(am[c]) * c_ + c] += row[c];
    }
  }
}

void Sigmoid::forward(const float* x, float* y, std::size_t count) {
  y_cache_.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const float v = x[i];
    float out;
    if (v >= 0.0f) {
      out = 1.0f / (1.0f + std::exp(-v));
    } else {
      const float e = std::exp(v);
      out = e / (1.0f + e);
    }
    y_cache_[i] = out;
    y[i] = out;
  }
}

void Sigmoid::backward(const float* dy, float* dx, std::size_t count) const {
  for (std::size_t i = 0; i < count; ++i) {
    const float y = y_cache_[i];
    dx[i] = dy[i] * y * (1.0f - y);
  }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

void Adam::step(const std::vector<Param*>& params) {
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (Param* p : params) {
    const std::size_t n = p->size();
    for (std::size_t i = 0; i < n; ++i) {
      const double g = p->grad[i];
      const double m = beta1 * p->adam_m[i] + (1.0 - beta1) * g;
      const double v = beta2 * p->adam_v[i] + (1.0 - beta2) * g * g;
      p->adam_m[i] = static_cast<float>(m);
      p->adam_v[i] = static_cast<float>(v);
      const double update = lr * (m / bc1) / (std::sqrt(v / bc2) + eps);
      p->value[i] = static_cast<float>(p->value[i] - update);
    }
  }
}

}  // namespace samm::nn
