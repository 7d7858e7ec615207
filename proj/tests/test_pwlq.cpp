#include <qkit/breakpoint_solver.hpp>
#include <qkit/distributions.hpp>
#include <qkit/pwlq.hpp>
#include <qkit/quantized_tensor.hpp>

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace qkit;

TEST(Pwlq, HandExamples) {
  const auto p = make_pwlq_params(3, 1.0, 0.5);
  ASSERT_EQ(p.region_count(), 2u);
  EXPECT_EQ(p.regions[0].bits, 2);
  EXPECT_NEAR(p.regions[0].scale, 0.5 / 3, 1e-15);

  const auto a = quantize_pwlq_value(0.3, p);
  EXPECT_EQ(a.region, 0);
  EXPECT_EQ(a.code, 2);
  EXPECT_NEAR(dequantize_pwlq_value(a.code, a.region, p), 1.0 / 3.0, 1e-12);

  const auto b = quantize_pwlq_value(0.8, p);
  EXPECT_EQ(b.region, 1);
  EXPECT_EQ(b.code, 2);
  EXPECT_NEAR(dequantize_pwlq_value(b.code, b.region, p), 0.5 + 2 * (0.5 / 3), 1e-12);
  EXPECT_NEAR(dequantize_pwlq_value(b.code, b.region, p), 0.833333, 1e-6);

  const auto z = quantize_pwlq_value(0.0, p);
  EXPECT_EQ(z.region, 0);
  EXPECT_EQ(z.code, 0);
  EXPECT_EQ(dequantize_pwlq_value(z.code, z.region, p), 0.0);
}

TEST(Pwlq, BreakpointTieGoesToCenterRegion) {
  const auto p = make_pwlq_params(4, 2.0, 0.7);
  EXPECT_EQ(quantize_pwlq_value(0.7, p).region, 0);
  EXPECT_EQ(quantize_pwlq_value(-0.7, p).region, 0);
  EXPECT_EQ(quantize_pwlq_value(std::nextafter(0.7, 1.0), p).region, 1);
}

TEST(Pwlq, NegativeTailKeepsItsSign) {
  // just past the breakpoint rounds to magnitude code 0 in the tail region
  const auto p = make_pwlq_params(4, 1.0, 0.4);
  const auto c = quantize_pwlq_value(-0.401, p);
  EXPECT_EQ(c.region, 1);
  EXPECT_NEAR(dequantize_pwlq_value(c.code, c.region, p), -0.4, 1e-12);
}

TEST(Pwlq, MatchesIndependentRoundTrip) {
  std::mt19937_64 rng(9);
  for (int bits = 2; bits <= 8; ++bits) {
    const double m = 2.5, bp = 0.9;
    const auto p = make_pwlq_params(bits, m, bp);
    std::uniform_real_distribution<double> u(-3, 3);
    for (int i = 0; i < 3000; ++i) {
      const double r = u(rng);
      const auto c = quantize_pwlq_value(r, p);
      ASSERT_NEAR(dequantize_pwlq_value(c.code, c.region, p), oracle::pwlq_roundtrip(r, bits, m, bp), 1e-12) << r;
    }
  }
}

TEST(Pwlq, PropertySignSymmetryBoundAndDomain) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> bits_d(2, 8);
  std::uniform_real_distribution<double> m_d(0.1, 10), frac(0.02, 0.98), u(-1.2, 1.2);
  for (int trial = 0; trial < 200; ++trial) {
    const int bits = bits_d(rng);
    const double m = m_d(rng);
    const auto p = make_pwlq_params(bits, m, frac(rng) * m);
    const double step = std::max(p.regions[0].scale, p.regions[1].scale);
    for (int i = 0; i < 500; ++i) {
      const double r = u(rng) * m;
      const auto c = quantize_pwlq_value(r, p);
      const auto n = quantize_pwlq_value(-r, p);
      ASSERT_GE(c.code, p.code_min());
      ASSERT_LE(c.code, p.code_max());
      ASSERT_EQ(c.region, n.region);
      if (r != 0) {
        ASSERT_EQ(n.code, ~c.code);
        ASSERT_EQ(dequantize_pwlq_value(n.code, n.region, p), -dequantize_pwlq_value(c.code, c.region, p));
      }
      ASSERT_EQ(c.region, std::abs(r) > p.breakpoints[0] ? 1 : 0);
      const double clamped = std::clamp(r, -m, m);
      ASSERT_LE(std::abs(dequantize_pwlq_value(c.code, c.region, p) - clamped), step / 2 + 1e-7 * m);
    }
  }
}

TEST(Pwlq, LevelCountMatchesOneMoreUniformBit) {
  for (int bits = 2; bits <= 8; ++bits) {
    const auto p = make_pwlq_params(bits, 1.0, 0.5);
    // two signs, two regions, 2^(b-1) magnitudes each
    const std::int64_t pwlq_levels = 2 * static_cast<std::int64_t>(p.region_count()) * p.regions[0].levels();
    EXPECT_EQ(pwlq_levels, std::int64_t{1} << (bits + 1));
  }
}

TEST(Pwlq, AllCenterTensorEqualsLowerBitUniform) {
  const auto p = make_pwlq_params(5, 4.0, 1.0);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double r = u(rng);
    const auto c = quantize_pwlq_value(r, p);
    ASSERT_EQ(c.region, 0);
    const double mag = oracle::uniform_roundtrip(std::abs(r), 4, 0.0, 1.0, false);
    ASSERT_NEAR(dequantize_pwlq_value(c.code, c.region, p), r < 0 ? -mag : mag, 1e-12);
  }
}

TEST(Pwlq, HalfBreakpointCloseToOneMoreBitUniform) {
  // p = m/2 gives four equal pieces; the grids differ slightly at +-p and 0
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(200'000);
  for (auto& x : v) x = u(rng);
  for (int bits : {6, 8}) {
    const double pw = empirical_mse(std::span<const float>(v), make_pwlq_params(bits, 1.0, 0.5));
    const double un = oracle::mse(v, [&](double r) { return oracle::uniform_roundtrip(r, bits + 1, -1, 1, true); });
    EXPECT_NEAR(pw / un, 1.0, 0.10) << "bits " << bits;
  }
}

TEST(Pwlq, GridPointsRoundTripExactly) {
  const auto p = make_pwlq_params(4, 1.0, 0.3);
  for (std::size_t r = 0; r < p.region_count(); ++r)
    for (int c = 0; c <= p.regions[r].code_max(); ++c) {
      const double v = dequantize_value(c, p.regions[r]);
      if (r == 1 && c == 0) continue;  // equals the breakpoint, owned by the center
      const auto q = quantize_pwlq_value(v, p);
      EXPECT_EQ(dequantize_pwlq_value(q.code, q.region, p), v);
    }
}

TEST(Pwlq, CenterRegionHoldsMostGaussianMass) {
  const auto d = DistributionModel::gaussian(1.0, 4.0);
  const auto t = sample_truncated(d, 200'000, 4);
  const auto sol = solve_breakpoint(d, 4, 4.0);
  const auto q = quantize_pwlq(t, make_pwlq_params(4, 4.0, sol.breakpoint()));
  std::size_t center = 0;
  for (auto r : q.regions) center += r == 0;
  EXPECT_GT(static_cast<double>(center) / t.size(), 0.75);
}

TEST(Pwlq, PwlqBeatsUniformOnGaussian) {
  const auto d = DistributionModel::gaussian(1.0, 4.0);
  const auto t = sample_truncated(d, 200'000, 8);
  const double m = stats(t).absmax;
  const auto sol = solve_breakpoint(d, 4, m);
  EXPECT_LT(empirical_mse(t, make_pwlq_params(4, m, sol.breakpoint())), empirical_mse(t, symmetric_params(4, m)));
}

TEST(Pwlq, MultiBreakpointRegions) {
  const auto p = make_pwlq_params(4, 3.0, std::vector<double>{0.5, 1.0, 2.0});
  EXPECT_EQ(p.region_count(), 4u);
  EXPECT_EQ(p.region_bits(), 2);
  EXPECT_EQ(make_pwlq_params(4, 3.0, std::vector<double>{0.5, 1.0}).region_bits(), 2);
  EXPECT_EQ(make_pwlq_params(4, 3.0, 1.0).region_bits(), 1);
  EXPECT_EQ(p.region_of(0.5), 0);
  EXPECT_EQ(p.region_of(0.75), 1);
  EXPECT_EQ(p.region_of(1.5), 2);
  EXPECT_EQ(p.region_of(2.5), 3);
  const auto c = quantize_pwlq_value(-1.7, p);
  EXPECT_EQ(c.region, 2);
  EXPECT_NEAR(dequantize_pwlq_value(c.code, c.region, p), -1.7, p.regions[2].scale / 2 + 1e-12);
}

TEST(Pwlq, InvalidParamsRejected) {
  EXPECT_THROW(make_pwlq_params(1, 1.0, 0.5), invalid_argument);
  EXPECT_THROW(make_pwlq_params(4, 1.0, 1.0), invalid_argument);
  EXPECT_THROW(make_pwlq_params(4, 1.0, 0.0), invalid_argument);
  EXPECT_THROW(make_pwlq_params(4, 1.0, std::vector<double>{0.6, 0.4}), invalid_argument);
  EXPECT_THROW(make_pwlq_params(4, 0.0, 0.5), invalid_argument);
}

TEST(Pwlq, TensorRoundTripAndValidation) {
  const Tensor t({2, 3}, {0.3f, -0.8f, 0.0f, 1.0f, -0.1f, 0.49f});
  const auto p = make_pwlq_params(3, 1.0, 0.5);
  auto q = quantize_pwlq(t, p);
  EXPECT_EQ(q.scheme(), Scheme::Pwlq);
  ASSERT_EQ(q.regions.size(), t.size());
  const auto d = dequantize(q);
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_NEAR(d[i], oracle::pwlq_roundtrip(t[i], 3, 1.0, 0.5), 1e-6);
  q.regions[0] = 5;
  EXPECT_THROW(validate(q), data_error);
  q.regions.clear();
  EXPECT_THROW(dequantize(q), data_error);
}
