#pragma once

#include <qkit/error.hpp>

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace qkit {

enum class Signedness { SymmetricSigned, AsymmetricUnsigned };

inline std::string_view to_string(Signedness s) {
  return s == Signedness::SymmetricSigned ? "symmetric_signed" : "asymmetric_unsigned";
}

inline Signedness parse_signedness(std::string_view s) {
  if (s == "symmetric_signed") return Signedness::SymmetricSigned;
  if (s == "asymmetric_unsigned") return Signedness::AsymmetricUnsigned;
  throw invalid_argument("unknown signedness '" + std::string(s) + "'");
}

/// Affine uniform quantizer: r_hat = scale * code + offset.
struct QuantParams {
  int bits = 8;
  double range_low = -1.0;
  double range_high = 1.0;
  double scale = 1.0;
  double offset = 0.0;
  Signedness signedness = Signedness::SymmetricSigned;

  std::int32_t code_min() const {
    return signedness == Signedness::SymmetricSigned ? -(std::int32_t{1} << (bits - 1)) : 0;
  }
  std::int32_t code_max() const {
    return signedness == Signedness::SymmetricSigned ? (std::int32_t{1} << (bits - 1)) - 1
                                                     : (std::int32_t{1} << bits) - 1;
  }
  bool contains(std::int32_t code) const { return code >= code_min() && code <= code_max(); }
  std::int64_t levels() const { return std::int64_t{1} << bits; }

  friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

/// Uniform-residual error constant 1 / (12 (2^b - 1)^2).
inline double error_constant(int bits) {
  const double levels = std::ldexp(1.0, bits) - 1.0;
  return 1.0 / (12.0 * levels * levels);
}

/// Quantizer over [lo, hi] with step (hi - lo) / (2^b - 1). Signed quantizers
/// carry a zero offset; unsigned ones are anchored at `lo`.
inline QuantParams make_params(int bits, double lo, double hi, Signedness signedness) {
  detail::require(bits >= 1 && bits <= 30, "bit width must lie in [1, 30]");
  detail::require(std::isfinite(lo) && std::isfinite(hi), "quantization range must be finite");
  detail::require(lo < hi, "quantization range must satisfy r_l < r_u");
  QuantParams p;
  p.bits = bits;
  p.range_low = lo;
  p.range_high = hi;
  p.signedness = signedness;
  p.scale = (hi - lo) / (std::ldexp(1.0, bits) - 1.0);
  p.offset = signedness == Signedness::SymmetricSigned ? 0.0 : lo;
  return p;
}

/// Like make_params, but an empty range (an all-zero channel) yields a
/// decodable unit-scale quantizer whose codes are all zero.
inline QuantParams make_params_or_degenerate(int bits, double lo, double hi, Signedness signedness) {
  if (lo < hi) return make_params(bits, lo, hi, signedness);
  detail::require(lo == hi && std::isfinite(lo), "quantization range must satisfy r_l <= r_u");
  QuantParams p;
  p.bits = bits;
  p.range_low = p.range_high = lo;
  p.signedness = signedness;
  p.scale = 1.0;
  p.offset = signedness == Signedness::SymmetricSigned ? 0.0 : lo;
  return p;
}

/// Symmetric [-absmax, absmax] weight quantizer.
inline QuantParams symmetric_params(int bits, double absmax) {
  return make_params_or_degenerate(bits, -absmax, absmax, Signedness::SymmetricSigned);
}

/// Round half-to-even, then saturate into the code domain. Inputs outside the
/// range are clamped first, so every finite input yields a valid code.
inline std::int32_t quantize_value(double r, const QuantParams& p) {
  if (std::isnan(r)) throw data_error("cannot quantize NaN");
  const double clamped = std::fmin(std::fmax(r, p.range_low), p.range_high);
  const double q = std::nearbyint((clamped - p.offset) / p.scale);
  if (q <= p.code_min()) return p.code_min();
  if (q >= p.code_max()) return p.code_max();
  return static_cast<std::int32_t>(q);
}

inline double dequantize_value(std::int32_t code, const QuantParams& p) { return p.scale * code + p.offset; }

/// Expected squared error C(b) * (r_u - r_l)^2 under a uniform residual.
inline double expected_uniform_error(int bits, double lo, double hi) {
  detail::require(bits >= 1, "bit width must be at least 1");
  detail::require(lo < hi, "quantization range must satisfy r_l < r_u");
  const double delta = hi - lo;
  return error_constant(bits) * delta * delta;
}

}  // namespace qkit
