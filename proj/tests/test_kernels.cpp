// Copyright 2026 The Epihawkes Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "epihawkes/kernels.hpp"
#include "oracles.hpp"

namespace epihawkes {
namespace {

const KernelSpec kGi{6.7, 1.8};      // generation interval
const KernelSpec kReport{8.8, 4.1};  // reporting delay

TEST(KernelSpec, MomentMatchedParameters) {
  EXPECT_NEAR(kGi.shape(), 13.8549, 1e-4);
  EXPECT_NEAR(kGi.rate(), 2.06790, 1e-5);
  EXPECT_THROW((KernelSpec{0.0, 1.0}).validate(), std::invalid_argument);
  EXPECT_THROW((KernelSpec{1.0, -1.0}).validate(), std::invalid_argument);
}

TEST(Density, NegativeSupportIsZero) {
  EXPECT_DOUBLE_EQ(density(kGi, -1.0), 0.0);
}

TEST(Density, UnitExponentialAtZero) {
  EXPECT_DOUBLE_EQ(density(KernelSpec{1.0, 1.0}, 0.0), 1.0);
}

TEST(Density, MatchesReferenceFormula) {
  const GammaKernel gi(kGi);
  for (double s : {0.5, 2.0, 6.7, 11.0, 20.0}) {
    EXPECT_NEAR(gi.density(s), oracles::gamma_pdf(s, kGi.shape(), kGi.rate()),
                1e-12 * oracles::gamma_pdf(s, kGi.shape(), kGi.rate()) + 1e-300);
  }
}

TEST(Density, IntegratesToOne) {
  for (const auto& spec : {kGi, kReport}) {
    const GammaKernel kernel(spec);
    const double mass =
        oracles::quadrature([&](double s) { return kernel.density(s); }, 0.0, 200.0, 1e-12);
    EXPECT_GE(mass, 1.0 - 1e-9);
    EXPECT_LE(mass, 1.0 + 1e-10);
  }
}

TEST(IntervalMass, BasicContracts) {
  const GammaKernel gi(kGi);
  EXPECT_DOUBLE_EQ(gi.interval_mass(0.0, std::numeric_limits<double>::infinity()), 1.0);
  EXPECT_DOUBLE_EQ(gi.interval_mass(3.0, 3.0), 0.0);
  EXPECT_DOUBLE_EQ(gi.interval_mass(-5.0, 0.0), 0.0);
  EXPECT_THROW(gi.interval_mass(2.0, 1.0), std::invalid_argument);
}

TEST(IntervalMass, GenerationIntervalNearlyExhaustedBy21Days) {
  const GammaKernel gi(kGi);
  const double mass = gi.interval_mass(0.0, 21.0);
  EXPECT_NEAR(mass, 1.0, 1e-3);
  const double quad = oracles::quadrature([&](double s) { return gi.density(s); }, 0.0, 21.0, 1e-13);
  EXPECT_NEAR(mass, quad, 1e-9);
}

TEST(IntervalMass, MatchesQuadratureOnRandomIntervals) {
  const GammaKernel report(kReport);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    const double lo = std::uniform_real_distribution<double>(0.0, 25.0)(rng);
    const double hi = lo + std::uniform_real_distribution<double>(0.0, 20.0)(rng);
    const double quad =
        oracles::quadrature([&](double s) { return report.density(s); }, lo, hi, 1e-13);
    EXPECT_NEAR(report.interval_mass(lo, hi), quad, 1e-9);
  }
}

TEST(IntervalMass, NonDecreasingFromZero) {
  for (const auto& spec : {kGi, kReport}) {
    const GammaKernel kernel(spec);
    double prev = 0.0;
    for (double x = 0.0; x <= 60.0; x += 0.25) {
      const double mass = kernel.interval_mass(0.0, x);
      EXPECT_GE(mass, prev);
      prev = mass;
    }
    EXPECT_NEAR(prev, 1.0, 1e-9);
  }
}

TEST(SampleTruncated, DrawsStayInsideWindow) {
  const GammaKernel gi(kGi);
  RngStream rng(42);
  std::mt19937_64 windows(5);
  for (int w = 0; w < 25; ++w) {
    const double lo = std::uniform_real_distribution<double>(0.0, 12.0)(windows);
    const double hi = lo + std::uniform_real_distribution<double>(0.2, 15.0)(windows);
    if (!(gi.interval_mass(lo, hi) > 0.0)) continue;
    for (int i = 0; i < 400; ++i) {
      const double x = gi.sample_truncated(lo, hi, rng);
      EXPECT_GE(x, lo);
      EXPECT_LT(x, hi);
    }
  }
}

TEST(SampleTruncated, ZeroMassWindowThrows) {
  const GammaKernel gi(kGi);
  RngStream rng(1);
  EXPECT_THROW(gi.sample_truncated(500.0, 501.0, rng), UnsampleableRegionError);
}

TEST(SampleTruncated, UntruncatedMeanMatchesAnalytic) {
  const GammaKernel gi(kGi);
  RngStream rng(99);
  const std::size_t n = 1000000;
  std::vector<double> draws(n);
  for (auto& d : draws) d = gi.sample_truncated(0.0, std::numeric_limits<double>::infinity(), rng);
  const auto m = oracles::sample_moments(draws);
  EXPECT_NEAR(m.mean, kGi.mean, 3.0 * m.se_mean);
}

TEST(SampleTruncated, KolmogorovSmirnovAgainstTruncatedCdf) {
  const GammaKernel gi(kGi);
  RngStream rng(7);
  const double lo = 4.0, hi = 9.0;
  const double p_lo = gi.cdf(lo), p_hi = gi.cdf(hi);
  const std::size_t n = 100000;
  std::vector<double> draws(n);
  for (auto& d : draws) d = gi.sample_truncated(lo, hi, rng);
  const double d_stat = oracles::ks_statistic(
      std::move(draws), [&](double x) { return (gi.cdf(x) - p_lo) / (p_hi - p_lo); });
  EXPECT_LT(d_stat, oracles::ks_critical_1pct(n));
}

}  // namespace
}  // namespace epihawkes
