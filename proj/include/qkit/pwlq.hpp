#pragma once

#include <qkit/error.hpp>
#include <qkit/uniform_quant.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace qkit {

enum class Granularity { PerLayer, PerChannel };

inline std::string_view to_string(Granularity g) { return g == Granularity::PerLayer ? "per-layer" : "per-channel"; }

inline Granularity parse_granularity(std::string_view s) {
  if (s == "per-layer") return Granularity::PerLayer;
  if (s == "per-channel") return Granularity::PerChannel;
  throw invalid_argument("unknown granularity '" + std::string(s) + "'");
}

/// Piecewise linear quantizer over [-bound, bound].
///
/// Breakpoints t_1 < ... < t_K split the magnitude axis [0, bound] into K + 1
/// regions [t_i, t_{i+1}] (t_0 = 0, t_{K+1} = bound). Every region is a
/// (b-1)-bit unsigned quantizer anchored at its lower edge; the sign is kept
/// separately, so each value costs b bits plus a region index.
///
/// Codes are stored in the b-bit two's complement domain using a ones'
/// complement sign: code = mag for r >= 0 and code = ~mag = -1 - mag for
/// r < 0. This keeps "-0" distinct, which matters in the tail region where a
/// zero magnitude decodes to +-t_i.
struct PwlqParams {
  int bits = 4;
  double bound = 1.0;
  std::vector<double> breakpoints;
  std::vector<QuantParams> regions;
  double shift = 0.0;  ///< additive term after sign restoration (bias correction)

  std::size_t region_count() const { return regions.size(); }

  /// Bits needed to store a region index.
  int region_bits() const {
    return regions.size() <= 1 ? 0 : static_cast<int>(std::bit_width(regions.size() - 1));
  }

  std::int32_t code_min() const { return -(std::int32_t{1} << (bits - 1)); }
  std::int32_t code_max() const { return (std::int32_t{1} << (bits - 1)) - 1; }

  /// Lower edge of region i on the magnitude axis.
  double region_low(std::size_t i) const { return i == 0 ? 0.0 : breakpoints[i - 1]; }
  double region_high(std::size_t i) const { return i == breakpoints.size() ? bound : breakpoints[i]; }

  /// Region index for a magnitude; a magnitude equal to a breakpoint belongs
  /// to the lower (closed) region.
  std::uint8_t region_of(double magnitude) const {
    const auto it = std::lower_bound(breakpoints.begin(), breakpoints.end(), magnitude);
    return static_cast<std::uint8_t>(it - breakpoints.begin());
  }

  friend bool operator==(const PwlqParams&, const PwlqParams&) = default;
};

inline PwlqParams make_pwlq_params(int bits, double bound, std::vector<double> breakpoints) {
  detail::require(bits >= 2 && bits <= 16, "PWLQ bit width must lie in [2, 16]");
  detail::require(bound > 0.0 && std::isfinite(bound), "PWLQ range bound must be positive");
  detail::require(!breakpoints.empty() && breakpoints.size() <= 255, "PWLQ needs between 1 and 255 breakpoints");
  double prev = 0.0;
  for (double t : breakpoints) {
    detail::require(std::isfinite(t) && t > prev && t < bound,
                    "breakpoints must be strictly increasing inside (0, m)");
    prev = t;
  }
  PwlqParams p;
  p.bits = bits;
  p.bound = bound;
  p.breakpoints = std::move(breakpoints);
  for (std::size_t i = 0; i <= p.breakpoints.size(); ++i)
    p.regions.push_back(make_params(bits - 1, p.region_low(i), p.region_high(i), Signedness::AsymmetricUnsigned));
  return p;
}

inline PwlqParams make_pwlq_params(int bits, double bound, double breakpoint) {
  return make_pwlq_params(bits, bound, std::vector<double>{breakpoint});
}

struct PwlqCode {
  std::int32_t code;
  std::uint8_t region;
};

inline bool pwlq_negative(std::int32_t code) { return code < 0; }
inline std::int32_t pwlq_magnitude(std::int32_t code) { return code < 0 ? -1 - code : code; }
inline std::int32_t pwlq_pack(bool negative, std::int32_t magnitude) { return negative ? -1 - magnitude : magnitude; }

/// Signed integer multiplicand carried by a code: sign * magnitude.
inline std::int32_t pwlq_signed_magnitude(std::int32_t code) { return code < 0 ? -(-1 - code) : code; }

inline PwlqCode quantize_pwlq_value(double r, const PwlqParams& p) {
  if (std::isnan(r)) throw data_error("cannot quantize NaN");
  const double mag = std::min(std::abs(r), p.bound);
  const std::uint8_t region = p.region_of(mag);
  const std::int32_t q = quantize_value(mag, p.regions[region]);
  return {pwlq_pack(r < 0.0, q), region};
}

inline double dequantize_pwlq_value(std::int32_t code, std::uint8_t region, const PwlqParams& p) {
  const double v = dequantize_value(pwlq_magnitude(code), p.regions[region]);
  return (pwlq_negative(code) ? -v : v) + p.shift;
}

}  // namespace qkit
