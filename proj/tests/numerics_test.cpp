// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "deltakd/numerics.hpp"
#include "deltakd/random.hpp"

using namespace deltakd;

namespace {

// Frozen from a 30-digit mpmath evaluation.
constexpr double kLn2 = 0.693147180559945309417;
constexpr double kSigmoid1 = 0.731058578630004879251;
constexpr double kNegLogSigmoidMinus1 = 1.31326168751822283405;
constexpr double kKlHalfVsQuarter = 0.143841036225890463720;

std::vector<double> random_row(Rng& rng, std::size_t v, double lo, double hi) {
  std::vector<double> r(v);
  for (auto& x : r) x = uniform_real(rng, lo, hi);
  return r;
}

}  // namespace

TEST(LogSumExp, Examples) {
  EXPECT_NEAR(log_sum_exp(std::vector<double>{0, 0}), kLn2, 1e-15);
  EXPECT_EQ(log_sum_exp(std::vector<double>{-3.25}), -3.25);
  EXPECT_NEAR(log_sum_exp(std::vector<double>{1000, 1000}), 1000 + kLn2, 1e-12);
}

TEST(LogSumExp, RejectsEmptyAndHandlesLargeMagnitudes) {
  EXPECT_THROW(log_sum_exp(std::vector<double>{}), DomainError);
  const double v = log_sum_exp(std::vector<double>{1e4, -1e4, 9999.5});
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(v, 1e4 + std::log1p(std::exp(-0.5)), 1e-9);
}

TEST(TempSoftmax, Examples) {
  const auto u = temp_softmax(std::vector<double>{2.5, 2.5, 2.5}, Temperature{0.3});
  for (double p : u) EXPECT_NEAR(p, 1.0 / 3.0, 1e-15);

  const auto s = temp_softmax(std::vector<double>{1, 0}, Temperature{1});
  EXPECT_NEAR(s[0], kSigmoid1, 1e-15);
  EXPECT_NEAR(s[1], 1 - kSigmoid1, 1e-15);

  const auto scaled = temp_softmax(std::vector<double>{2, 0}, Temperature{2});
  EXPECT_NEAR(scaled[0], s[0], 1e-15);
  EXPECT_NEAR(scaled[1], s[1], 1e-15);
}

TEST(TempSoftmax, RejectsNonPositiveTemperature) {
  EXPECT_THROW(Temperature{0.0}, DomainError);
  EXPECT_THROW(Temperature{-1.0}, DomainError);
}

TEST(LogSoftmax, Examples) {
  const auto u = log_softmax(std::vector<double>{0, 0});
  EXPECT_NEAR(u[0], -kLn2, 1e-15);
  EXPECT_NEAR(u[1], -kLn2, 1e-15);
  const auto l = log_softmax(std::vector<double>{1, 0});
  EXPECT_NEAR(l[0], std::log(kSigmoid1), 1e-15);
  EXPECT_NEAR(l[1], -kNegLogSigmoidMinus1, 1e-15);
}

TEST(KlDivergence, Examples) {
  const std::vector<double> p{std::log(0.5), std::log(0.5)};
  EXPECT_NEAR(kl_divergence_log(p, p), 0.0, 1e-12);
  const std::vector<double> q{std::log(0.25), std::log(0.75)};
  EXPECT_NEAR(kl_divergence_log(p, q), kKlHalfVsQuarter, 1e-15);
  EXPECT_NEAR(kl_divergence(std::vector<double>{0.5, 0.5}, q), kKlHalfVsQuarter, 1e-15);
  // Zero-mass entry contributes nothing.
  EXPECT_NEAR(kl_divergence(std::vector<double>{1.0, 0.0}, p), kLn2, 1e-15);
  EXPECT_THROW(kl_divergence_log(p, std::vector<double>{0.0}), DomainError);
}

TEST(CrossEntropy, Examples) {
  EXPECT_EQ(cross_entropy(1, std::vector<double>{-50.0, 0.0}), 0.0);
  const std::vector<double> uniform(4, -std::log(4.0));
  for (TokenId t = 0; t < 4; ++t) EXPECT_NEAR(cross_entropy(t, uniform), std::log(4.0), 1e-15);
  EXPECT_NEAR(cross_entropy(1, log_softmax(std::vector<double>{1, 0})), kNegLogSigmoidMinus1, 1e-14);
  EXPECT_THROW(cross_entropy(4, uniform), DomainError);
}

TEST(NumericsProperties, SoftmaxNormalizationAndRange) {
  Rng rng(11);
  for (std::size_t v : {2u, 16u, 64u}) {
    for (int trial = 0; trial < 1000; ++trial) {
      const auto z = random_row(rng, v, -20, 20);
      const auto p = temp_softmax(z, Temperature{1.0});
      double s = 0;
      for (double x : p) {
        ASSERT_GT(x, 0.0);
        // For V = 2 a logit gap above ~36.7 puts the complement mass below
        // half an ulp of 1.0, so the larger entry rounds to exactly 1.
        if (v > 2) {
          ASSERT_LT(x, 1.0);
        } else {
          ASSERT_LE(x, 1.0);
        }
        s += x;
      }
      ASSERT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(NumericsProperties, ShiftInvarianceAndLogConsistency) {
  Rng rng(12);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t v = 2 + uniform_index(rng, 63);
    auto z = random_row(rng, v, -20, 20);
    const Temperature tau{uniform_real(rng, 0.5, 2.0)};
    const auto p = temp_softmax(z, tau);
    const auto lp = log_softmax(z, tau);
    ASSERT_NEAR(log_sum_exp(lp), 0.0, 1e-9);
    const double c = uniform_real(rng, -100, 100);
    auto shifted = z;
    for (auto& x : shifted) x += c;
    const auto ps = temp_softmax(shifted, tau);
    for (std::size_t i = 0; i < v; ++i) {
      ASSERT_NEAR(ps[i], p[i], 1e-12);
      ASSERT_NEAR(std::exp(lp[i]), p[i], 1e-12);
    }
  }
}

TEST(NumericsProperties, GibbsInequality) {
  Rng rng(13);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t v = 2 + uniform_index(rng, 63);
    const auto a = log_softmax(random_row(rng, v, -20, 20));
    const auto b = log_softmax(random_row(rng, v, -20, 20));
    ASSERT_GE(kl_divergence_log(a, b), -1e-12);
  }
}
