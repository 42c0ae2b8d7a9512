#pragma once

// The four training losses and their gradients. Scalar-templated so the test
// suite can drive the exact same formulas in double precision.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "samm/types.hpp"

namespace samm::losses {

struct LossWeights {
  double w_cls = 1.0;
  double w_fd = 1.0;
  double w_adv = 1.0;
};

inline constexpr double kProbEps = 1e-7;

template <typename T>
T clamp_prob(T p) {
  return std::clamp(p, static_cast<T>(kProbEps), static_cast<T>(1.0 - kProbEps));
}

// ||f_org - f_aug||^2 / 2 for one pair.
template <typename T>
double feature_distance_loss(std::span<const T> f_org, std::span<const T> f_aug) {
  if (f_org.size() != f_aug.size())
    throw ShapeError("feature_distance_loss: length mismatch " + std::to_string(f_org.size()) +
                     " vs " + std::to_string(f_aug.size()));
  double acc = 0.0;
  for (std::size_t i = 0; i < f_org.size(); ++i) {
    const double d = static_cast<double>(f_org[i]) - static_cast<double>(f_aug[i]);
    acc += d * d;
  }
  return acc / 2.0;
}

// d/d f_org and d/d f_aug of the unscaled pair loss.
template <typename T>
void feature_distance_grad(std::span<const T> f_org, std::span<const T> f_aug,
                           std::span<T> d_org, std::span<T> d_aug) {
  for (std::size_t i = 0; i < f_org.size(); ++i) {
    const T d = f_org[i] - f_aug[i];
    d_org[i] = d;
    d_aug[i] = -d;
  }
}

// Binary cross-entropy of the discriminator prediction against the target
// modality. d_hat is clamped away from {0, 1}.
template <typename T>
double cmd_discriminator_loss(T d_hat, int d) {
  const double p = clamp_prob(static_cast<double>(d_hat));
  return d != 0 ? -std::log(p) : -std::log(1.0 - p);
}

template <typename T>
double cmd_discriminator_grad(T d_hat, int d) {
  const double p = clamp_prob(static_cast<double>(d_hat));
  if (static_cast<double>(d_hat) <= kProbEps || static_cast<double>(d_hat) >= 1.0 - kProbEps)
    return 0.0;  // clamped region
  return d != 0 ? -1.0 / p : 1.0 / (1.0 - p);
}

// Encoder-side adversarial loss: -log(1 - p) where p is the probability the
// discriminator assigns to the sample's true modality.
template <typename T>
double cmd_encoder_loss(T d_hat_correct) {
  const double p = clamp_prob(static_cast<double>(d_hat_correct));
  return -std::log(1.0 - p);
}

template <typename T>
double cmd_encoder_grad(T d_hat_correct) {
  const double p = clamp_prob(static_cast<double>(d_hat_correct));
  if (static_cast<double>(d_hat_correct) <= kProbEps ||
      static_cast<double>(d_hat_correct) >= 1.0 - kProbEps)
    return 0.0;
  return 1.0 / (1.0 - p);
}

// Softmax cross-entropy for one sample.
template <typename T>
double classification_loss(std::span<const T> logits, int label) {
  const int c = static_cast<int>(logits.size());
  if (label < 0 || label >= c)
    throw ArgumentError("classification_loss: label " + std::to_string(label) +
                        " out of range for " + std::to_string(c) + " classes");
  double max_logit = logits[0];
  for (int i = 1; i < c; ++i) max_logit = std::max(max_logit, static_cast<double>(logits[i]));
  double sum = 0.0;
  for (int i = 0; i < c; ++i) sum += std::exp(static_cast<double>(logits[i]) - max_logit);
  return std::log(sum) - (static_cast<double>(logits[label]) - max_logit);
}

// dL/dlogits = softmax(logits) - onehot(label).
template <typename T>
void classification_grad(std::span<const T> logits, int label, std::span<T> dlogits) {
  const int c = static_cast<int>(logits.size());
  double max_logit = logits[0];
  for (int i = 1; i < c; ++i) max_logit = std::max(max_logit, static_cast<double>(logits[i]));
  double sum = 0.0;
  for (int i = 0; i < c; ++i) sum += std::exp(static_cast<double>(logits[i]) - max_logit);
  for (int i = 0; i < c; ++i) {
    const double p = std::exp(static_cast<double>(logits[i]) - max_logit) / sum;
    dlogits[i] = static_cast<T>(p - (i == label ? 1.0 : 0.0));
  }
}

// Batch means.

template <typename T>
double feature_distance_loss_batch(const T* f_org, const T* f_aug, int n, int dim) {
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    acc += feature_distance_loss(std::span<const T>(f_org + static_cast<std::size_t>(i) * dim, dim),
                                 std::span<const T>(f_aug + static_cast<std::size_t>(i) * dim, dim));
  }
  return acc / n;
}

template <typename T>
double cmd_discriminator_loss_batch(std::span<const T> d_hat, std::span<const int> d) {
  double acc = 0.0;
  for (std::size_t i = 0; i < d_hat.size(); ++i) acc += cmd_discriminator_loss(d_hat[i], d[i]);
  return acc / static_cast<double>(d_hat.size());
}

template <typename T>
double cmd_encoder_loss_batch(std::span<const T> d_hat_correct) {
  double acc = 0.0;
  for (const T& p : d_hat_correct) acc += cmd_encoder_loss(p);
  return acc / static_cast<double>(d_hat_correct.size());
}

template <typename T>
double classification_loss_batch(const T* logits, const int* labels, int n, int class_count) {
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    acc += classification_loss(
        std::span<const T>(logits + static_cast<std::size_t>(i) * class_count, class_count),
        labels[i]);
  }
  return acc / n;
}

// Weighted total for the encoder training step. Throws NumericError naming
// the first non-finite term.
inline double encoder_step_total(double l_cls, double l_fd, double l_adv, const LossWeights& w) {
  if (!std::isfinite(l_cls)) throw NumericError("encoder_step_total: l_cls is not finite");
  if (!std::isfinite(l_fd)) throw NumericError("encoder_step_total: l_fd is not finite");
  if (!std::isfinite(l_adv)) throw NumericError("encoder_step_total: l_adv is not finite");
  return w.w_cls * l_cls + w.w_fd * l_fd + w.w_adv * l_adv;
}

}  // namespace samm::losses
