#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "doctest.h"
#include "samm/losses.hpp"

using namespace samm;

namespace {

// Double-precision central difference; h small enough for 1e-6 agreement.
template <typename F>
double central_diff(F&& f, double x, double h = 1e-6) {
  return (f(x + h) - f(x - h)) / (2 * h);
}

}  // namespace

TEST_CASE("feature distance loss on pinned values") {
  const double e1[] = {1.0, 0.0, 0.0};
  const double z[] = {0.0, 0.0, 0.0};
  CHECK(losses::feature_distance_loss<double>(e1, z) == doctest::Approx(0.5).epsilon(1e-9));

  const double v[] = {3.0, 4.0, 0.0};
  CHECK(losses::feature_distance_loss<double>(v, z) == doctest::Approx(12.5).epsilon(1e-9));

  CHECK(losses::feature_distance_loss<double>(v, v) == 0.0);

  const double a[] = {1.0, 2.0};
  const double b[] = {1.0, 2.0, 3.0};
  CHECK_THROWS_AS(losses::feature_distance_loss<double>(a, b), ShapeError);
}

TEST_CASE("feature distance is invariant to coordinate reordering") {
  std::mt19937 rng(5);
  std::normal_distribution<double> dist;
  std::vector<double> f(64), g(64);
  for (int i = 0; i < 64; ++i) {
    f[i] = dist(rng);
    g[i] = dist(rng);
  }
  const double base = losses::feature_distance_loss<double>(f, g);
  std::vector<int> perm(64);
  for (int i = 0; i < 64; ++i) perm[i] = 63 - i;
  std::vector<double> fp(64), gp(64);
  for (int i = 0; i < 64; ++i) {
    fp[i] = f[perm[i]];
    gp[i] = g[perm[i]];
  }
  CHECK(losses::feature_distance_loss<double>(fp, gp) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("feature distance gradient matches finite differences") {
  std::mt19937 rng(7);
  std::normal_distribution<double> dist;
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> f(8), g(8), df(8), dg(8);
    for (int i = 0; i < 8; ++i) {
      f[i] = dist(rng);
      g[i] = dist(rng);
    }
    losses::feature_distance_grad<double>(f, g, df, dg);
    for (int i = 0; i < 8; ++i) {
      const double nf = central_diff(
          [&](double x) {
            auto fx = f;
            fx[i] = x;
            return losses::feature_distance_loss<double>(fx, g);
          },
          f[i]);
      const double ng = central_diff(
          [&](double x) {
            auto gx = g;
            gx[i] = x;
            return losses::feature_distance_loss<double>(f, gx);
          },
          g[i]);
      CHECK(df[i] == doctest::Approx(nf).epsilon(1e-5));
      CHECK(dg[i] == doctest::Approx(ng).epsilon(1e-5));
    }
  }
}

TEST_CASE("discriminator BCE on pinned values") {
  CHECK(losses::cmd_discriminator_loss(0.5, 1) == doctest::Approx(0.6931471805599453).epsilon(1e-9));
  CHECK(losses::cmd_discriminator_loss(0.5, 0) == doctest::Approx(0.6931471805599453).epsilon(1e-9));
  CHECK(losses::cmd_discriminator_loss(0.9, 1) == doctest::Approx(-std::log(0.9)).epsilon(1e-9));
  CHECK(losses::cmd_discriminator_loss(0.9, 0) == doctest::Approx(-std::log(0.1)).epsilon(1e-9));

  // Clamping keeps the loss finite at the endpoints.
  CHECK(std::isfinite(losses::cmd_discriminator_loss(0.0, 1)));
  CHECK(losses::cmd_discriminator_loss(0.0, 1) == doctest::Approx(-std::log(1e-7)).epsilon(1e-6));
  CHECK(std::isfinite(losses::cmd_discriminator_loss(1.0, 0)));
}

TEST_CASE("discriminator gradient matches finite differences away from the clamp") {
  for (double p : {0.1, 0.3, 0.5, 0.7, 0.95}) {
    for (int d : {0, 1}) {
      const double numeric =
          central_diff([&](double x) { return losses::cmd_discriminator_loss(x, d); }, p);
      CHECK(losses::cmd_discriminator_grad(p, d) == doctest::Approx(numeric).epsilon(1e-5));
    }
  }
  CHECK(losses::cmd_discriminator_grad(0.0, 1) == 0.0);  // clamped region is flat
  CHECK(losses::cmd_discriminator_grad(1.0, 0) == 0.0);
}

TEST_CASE("encoder adversarial loss on pinned values") {
  CHECK(losses::cmd_encoder_loss(0.9) == doctest::Approx(2.302585092994046).epsilon(1e-9));
  CHECK(losses::cmd_encoder_loss(0.5) == doctest::Approx(0.6931471805599453).epsilon(1e-9));
  CHECK(std::isfinite(losses::cmd_encoder_loss(1.0)));

  for (double p : {0.05, 0.4, 0.6, 0.9}) {
    const double numeric = central_diff([&](double x) { return losses::cmd_encoder_loss(x); }, p);
    CHECK(losses::cmd_encoder_grad(p) == doctest::Approx(numeric).epsilon(1e-5));
  }
  CHECK(losses::cmd_encoder_grad(1.0) == 0.0);
}

TEST_CASE("classification loss on pinned values") {
  const double uniform6[] = {0, 0, 0, 0, 0, 0};
  CHECK(losses::classification_loss<double>(uniform6, 3) ==
        doctest::Approx(1.791759469228055).epsilon(1e-9));

  const double uniform2[] = {0.0, 0.0};
  CHECK(losses::classification_loss<double>(uniform2, 0) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-9));

  // Shift invariance and a confident prediction.
  const double shifted[] = {100.0, 100.0};
  CHECK(losses::classification_loss<double>(shifted, 1) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-9));

  const double confident[] = {10.0, -10.0};
  CHECK(losses::classification_loss<double>(confident, 0) ==
        doctest::Approx(std::log1p(std::exp(-20.0))).epsilon(1e-6));

  CHECK_THROWS_AS(losses::classification_loss<double>(uniform6, 6), ArgumentError);
  CHECK_THROWS_AS(losses::classification_loss<double>(uniform6, -1), ArgumentError);
}

TEST_CASE("classification gradient matches finite differences and sums to zero") {
  std::mt19937 rng(11);
  std::normal_distribution<double> dist(0.0, 2.0);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> logits(5);
    for (auto& v : logits) v = dist(rng);
    const int label = trial % 5;
    std::vector<double> grad(5);
    losses::classification_grad<double>(logits, label, grad);

    double sum = 0.0;
    for (int i = 0; i < 5; ++i) {
      const double numeric = central_diff(
          [&](double x) {
            auto l = logits;
            l[i] = x;
            return losses::classification_loss<double>(l, label);
          },
          logits[i]);
      CHECK(grad[i] == doctest::Approx(numeric).epsilon(1e-5));
      sum += grad[i];
    }
    CHECK(sum == doctest::Approx(0.0).epsilon(1e-9));
  }
}

TEST_CASE("batch means average per-sample losses") {
  const double f[] = {1, 0, 0, 0};  // two pairs of dim 2
  const double g[] = {0, 0, 0, 0};
  // pair 0: 0.5, pair 1: 0 -> mean 0.25
  CHECK(losses::feature_distance_loss_batch(f, g, 2, 2) == doctest::Approx(0.25).epsilon(1e-12));

  const double dhat[] = {0.5, 0.9};
  const int targets[] = {1, 1};
  CHECK(losses::cmd_discriminator_loss_batch<double>(dhat, targets) ==
        doctest::Approx((0.6931471805599453 - std::log(0.9)) / 2).epsilon(1e-9));

  const double correct[] = {0.9, 0.5};
  CHECK(losses::cmd_encoder_loss_batch<double>(correct) ==
        doctest::Approx((2.302585092994046 + 0.6931471805599453) / 2).epsilon(1e-9));

  const double logits[] = {0, 0, 0, 0};  // two samples, C = 2
  const int labels[] = {0, 1};
  CHECK(losses::classification_loss_batch(logits, labels, 2, 2) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("weighted total and non-finite detection") {
  losses::LossWeights w;
  CHECK(losses::encoder_step_total(1.0, 2.0, 3.0, w) == doctest::Approx(6.0));

  w.w_cls = 2.0;
  w.w_fd = 0.5;
  w.w_adv = 0.0;
  CHECK(losses::encoder_step_total(1.0, 2.0, 3.0, w) == doctest::Approx(3.0));

  const double nan = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH_AS(losses::encoder_step_total(nan, 0, 0, w),
                       "encoder_step_total: l_cls is not finite", NumericError);
  CHECK_THROWS_WITH_AS(losses::encoder_step_total(0, nan, 0, w),
                       "encoder_step_total: l_fd is not finite", NumericError);
  CHECK_THROWS_WITH_AS(losses::encoder_step_total(0, 0, std::numeric_limits<double>::infinity(), w),
                       "encoder_step_total: l_adv is not finite", NumericError);
}

TEST_CASE("clamp_prob pins the working range") {
  CHECK(losses::clamp_prob(0.0) == doctest::Approx(1e-7));
  CHECK(losses::clamp_prob(1.0) == doctest::Approx(1.0 - 1e-7));
  CHECK(losses::clamp_prob(0.25) == 0.25);
}
