#include <qkit/quantized_tensor.hpp>
#include <qkit/uniform_quant.hpp>

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace qkit;

namespace {
constexpr auto Sym = Signedness::SymmetricSigned;
constexpr auto Asym = Signedness::AsymmetricUnsigned;
}  // namespace

TEST(UniformQuant, MakeParamsExamples) {
  const auto a = make_params(4, -1, 1, Sym);
  EXPECT_NEAR(a.scale, 2.0 / 15.0, 1e-15);
  EXPECT_EQ(a.offset, 0.0);
  const auto b = make_params(8, 0, 6, Asym);
  EXPECT_NEAR(b.scale, 6.0 / 255.0, 1e-15);
  EXPECT_EQ(b.offset, 0.0);
  EXPECT_EQ(b.code_min(), 0);
  EXPECT_EQ(b.code_max(), 255);
  const auto c = make_params(2, -1, 1, Sym);
  EXPECT_NEAR(c.scale, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(c.code_min(), -2);
  EXPECT_EQ(c.code_max(), 1);
  EXPECT_EQ(make_params(3, 1.5, 2.5, Asym).offset, 1.5);
}

TEST(UniformQuant, MakeParamsRejectsBadInput) {
  EXPECT_THROW(make_params(4, 1, 1, Sym), invalid_argument);
  EXPECT_THROW(make_params(4, 2, 1, Sym), invalid_argument);
  EXPECT_THROW(make_params(0, -1, 1, Sym), invalid_argument);
  EXPECT_NO_THROW(make_params(1, 0, 1, Asym));
}

TEST(UniformQuant, QuantizeExamples) {
  const auto p = make_params(4, -1, 1, Sym);
  EXPECT_EQ(quantize_value(0.3, p), 2);
  EXPECT_EQ(quantize_value(1.7, p), 7);
  EXPECT_EQ(quantize_value(0.0, p), 0);
  EXPECT_EQ(quantize_value(-5.0, p), -8);
  EXPECT_NEAR(dequantize_value(2, p), 4.0 / 15.0, 1e-15);
  EXPECT_EQ(dequantize_value(0, p), 0.0);
  EXPECT_THROW(quantize_value(std::nan(""), p), data_error);
}

TEST(UniformQuant, RoundingIsHalfToEven) {
  const auto p = make_params(4, -7.5, 7.5, Sym);  // s = 1
  EXPECT_EQ(quantize_value(0.5, p), 0);
  EXPECT_EQ(quantize_value(1.5, p), 2);
  EXPECT_EQ(quantize_value(2.5, p), 2);
  EXPECT_EQ(quantize_value(-0.5, p), 0);
  EXPECT_EQ(quantize_value(-1.5, p), -2);
}

TEST(UniformQuant, GridPointsRoundTripExactly) {
  const auto p = make_params(5, -2, 2, Sym);
  for (int c = p.code_min(); c <= p.code_max(); ++c) EXPECT_EQ(quantize_value(dequantize_value(c, p), p), c);
}

TEST(UniformQuant, ExpectedErrorExamples) {
  EXPECT_NEAR(expected_uniform_error(4, -1, 1), 1.481481e-3, 1e-9);
  EXPECT_NEAR(expected_uniform_error(4, -1, 1), 4.0 / 2700.0, 1e-18);
  EXPECT_NEAR(expected_uniform_error(8, 0, 1), 1.281558e-6, 1e-12);
  EXPECT_NEAR(expected_uniform_error(8, -1, 1), 4.0 / (12.0 * 255 * 255), 1e-18);
  EXPECT_NEAR(expected_uniform_error(6, -2, 2), 4.0 * expected_uniform_error(6, -1, 1), 1e-18);
  EXPECT_DOUBLE_EQ(error_constant(4), 1.0 / 2700.0);
}

TEST(UniformQuant, MatchesIndependentRoundTrip) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int bits : {2, 3, 4, 8}) {
    for (auto sg : {Sym, Asym}) {
      const auto p = make_params(bits, -1.25, 1.75, sg);
      for (int i = 0; i < 2000; ++i) {
        const double r = u(rng);
        const double lib = dequantize_value(quantize_value(r, p), p);
        ASSERT_NEAR(lib, oracle::uniform_roundtrip(r, bits, -1.25, 1.75, sg == Sym), 1e-12);
      }
    }
  }
}

TEST(UniformQuant, PropertyRoundTripBoundDomainMonotone) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> lo_d(-4, 0), width_d(0.01, 8), scale_d(-3, 3);
  std::uniform_int_distribution<int> bits_d(2, 8);
  for (int trial = 0; trial < 200; ++trial) {
    const int bits = bits_d(rng);
    const bool sym = trial % 2 == 1;
    double lo = lo_d(rng), hi = lo + width_d(rng);
    if (sym) hi = -lo + 0.01;  // signed grids are centred on zero
    if (sym) lo = -hi;
    const auto p = make_params(bits, lo, hi, sym ? Sym : Asym);
    std::vector<double> rs;
    for (int i = 0; i < 500; ++i) rs.push_back(lo + (hi - lo) * scale_d(rng));
    rs.push_back(std::numeric_limits<double>::max());
    rs.push_back(-std::numeric_limits<double>::max());
    std::sort(rs.begin(), rs.end());
    std::int32_t prev = std::numeric_limits<std::int32_t>::min();
    for (double r : rs) {
      const auto c = quantize_value(r, p);
      ASSERT_TRUE(p.contains(c));
      ASSERT_GE(c, prev);
      prev = c;
      ASSERT_LE(std::abs(dequantize_value(c, p) - std::clamp(r, lo, hi)), p.scale / 2 + 1e-7);
    }
  }
}

TEST(UniformQuant, EmpiricalMseMatchesFormulaOnUniformData) {
  std::mt19937_64 rng(5);
  for (int bits : {4, 8}) {
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    std::vector<float> v(1'000'000);
    for (auto& x : v) x = u(rng);
    const auto p = make_params(bits, -1, 1, Sym);
    const double emp = empirical_mse(std::span<const float>(v), p);
    const double levels = std::ldexp(1.0, bits) - 1;
    const double formula = 4.0 / (12.0 * levels * levels);
    EXPECT_NEAR(emp / formula, 1.0, 0.02) << "bits " << bits;
  }
}

TEST(UniformQuant, TensorQuantizeDequantize) {
  // -1 / (2/15) = -7.5 ties to the even code -8
  const Tensor t({2, 3}, {-1.0f, -0.3f, 0.0f, 0.3f, 0.9f, 1.7f});
  const auto p = make_params(4, -1, 1, Sym);
  const auto q = quantize_uniform(t, p);
  EXPECT_EQ(q.scheme(), Scheme::Uniform);
  EXPECT_TRUE(q.regions.empty());
  EXPECT_EQ(q.codes, (std::vector<std::int32_t>{-8, -2, 0, 2, 7, 7}));
  const auto d = dequantize(q);
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_NEAR(d[i], dequantize_value(q.codes[i], p), 1e-7);
}

TEST(UniformQuant, PerChannelUsesOneParamSetPerChannel) {
  const Tensor t({2, 2}, {0.5f, -0.5f, 4.0f, -2.0f});
  const auto q = quantize_uniform(t, {symmetric_params(4, 0.5), symmetric_params(4, 4.0)}, Granularity::PerChannel);
  EXPECT_EQ(q.param_count(), 2u);
  EXPECT_EQ(q.codes[0], 7);
  EXPECT_EQ(q.codes[2], 7);
  EXPECT_THROW(quantize_uniform(t, {symmetric_params(4, 1.0)}, Granularity::PerChannel), invalid_argument);
}

TEST(UniformQuant, DegenerateChannelDecodesToZero) {
  const auto p = symmetric_params(4, 0.0);
  EXPECT_EQ(p.scale, 1.0);
  const auto q = quantize_uniform(Tensor(std::vector<float>{0, 0, 0}), p);
  for (auto c : q.codes) EXPECT_EQ(c, 0);
  const auto d = dequantize(q);
  for (float x : d.data()) EXPECT_EQ(x, 0.0f);
}

TEST(UniformQuant, ValidateRejectsOutOfDomainCodes) {
  auto q = quantize_uniform(Tensor(std::vector<float>{0.1f, 0.2f}), make_params(4, -1, 1, Sym));
  EXPECT_NO_THROW(validate(q));
  q.codes[0] = 8;
  EXPECT_THROW(validate(q), data_error);
  EXPECT_THROW(dequantize(q), data_error);
}
