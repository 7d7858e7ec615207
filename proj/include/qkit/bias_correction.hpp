#pragma once

#include <qkit/error.hpp>
#include <qkit/pwlq.hpp>
#include <qkit/quantized_tensor.hpp>
#include <qkit/tensor.hpp>
#include <qkit/uniform_quant.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace qkit {

enum class CorrectionMode { None, MeanOnly, MeanAndVariance };

inline std::string_view to_string(CorrectionMode m) {
  switch (m) {
    case CorrectionMode::None: return "none";
    case CorrectionMode::MeanOnly: return "mean";
    case CorrectionMode::MeanAndVariance: return "mean-var";
  }
  return "?";
}

inline CorrectionMode parse_correction_mode(std::string_view s) {
  if (s == "none") return CorrectionMode::None;
  if (s == "mean") return CorrectionMode::MeanOnly;
  if (s == "mean-var") return CorrectionMode::MeanAndVariance;
  throw invalid_argument("unknown bias correction mode '" + std::string(s) + "'");
}

/// Measured bias of one channel's dequantized weights.
///
/// The corrected decode is  w' = xi * (w_hat - mean(w_hat)) + mean(w),
/// which zeroes the mean error and, with xi = std(w) / std(w_hat), restores
/// the standard deviation. Both terms fold into the affine decode.
struct BiasCorrection {
  double mean_error = 0.0;      ///< mean(w_hat - w)
  double scale_ratio = 1.0;     ///< std(w) / std(w_hat)
  double reference_mean = 0.0;  ///< mean(w)
  CorrectionMode mode = CorrectionMode::MeanAndVariance;

  /// Multiplicative factor applied to the decode.
  double gain() const { return mode == CorrectionMode::MeanAndVariance ? scale_ratio : 1.0; }
  /// Additive term applied after the gain.
  double bias() const {
    if (mode == CorrectionMode::None) return 0.0;
    const double dequantized_mean = reference_mean + mean_error;
    return reference_mean - gain() * dequantized_mean;
  }

  friend bool operator==(const BiasCorrection&, const BiasCorrection&) = default;
};

inline constexpr double kDegenerateStd = 1e-12;

template <class RangeA, class RangeB>
BiasCorrection measure_bias_values(const RangeA& original, const RangeB& dequantized,
                                   CorrectionMode mode = CorrectionMode::MeanAndVariance) {
  const std::size_t n = std::size(original);
  if (n != std::size(dequantized)) throw invalid_argument("bias measurement needs equally sized inputs");
  detail::require(n > 0, "bias measurement of an empty channel");
  const auto so = stats_of(original);
  const auto sd = stats_of(dequantized);
  BiasCorrection bc;
  bc.mode = mode;
  bc.reference_mean = so.mean;
  double diff = 0.0;
  for (std::size_t i = 0; i < n; ++i) diff += static_cast<double>(dequantized[i]) - original[i];
  bc.mean_error = diff / static_cast<double>(n);
  bc.scale_ratio = sd.stddev < kDegenerateStd ? 1.0 : so.stddev / sd.stddev;
  return bc;
}

/// One correction per channel along `axis` (or a single one for per-layer).
inline std::vector<BiasCorrection> measure_bias(const Tensor& original, const Tensor& dequantized, Granularity g,
                                                CorrectionMode mode = CorrectionMode::MeanAndVariance) {
  if (original.shape() != dequantized.shape()) throw invalid_argument("bias measurement: shape mismatch");
  const auto a = detail::parameter_views(original, g);
  const auto b = detail::parameter_views(dequantized, g);
  std::vector<BiasCorrection> out;
  out.reserve(a.size());
  for (std::size_t c = 0; c < a.size(); ++c) out.push_back(measure_bias_values(a[c], b[c], mode));
  return out;
}

namespace detail {

inline void check_correction(const BiasCorrection& bc) {
  if (!(bc.scale_ratio > 0.0) || !std::isfinite(bc.scale_ratio))
    throw invalid_argument("bias correction scale ratio must be positive and finite");
  if (!std::isfinite(bc.mean_error) || !std::isfinite(bc.reference_mean))
    throw invalid_argument("bias correction terms must be finite");
}

}  // namespace detail

/// scale' = g * scale, offset' = g * offset + bias. Codes are untouched.
inline QuantParams apply_correction(QuantParams p, const BiasCorrection& bc) {
  detail::check_correction(bc);
  const double g = bc.gain();
  p.scale *= g;
  p.offset = g * p.offset + bc.bias();
  return p;
}

/// Per region: scale' = g * scale, offset' = g * offset; the channel-level
/// additive term goes into `shift`, applied after the sign is restored.
inline PwlqParams apply_correction(PwlqParams p, const BiasCorrection& bc) {
  detail::check_correction(bc);
  const double g = bc.gain();
  for (auto& r : p.regions) {
    r.scale *= g;
    r.offset *= g;
  }
  p.shift = g * p.shift + bc.bias();
  return p;
}

/// Measures the bias of q against `original` and folds it into q's parameters.
inline QuantizedTensor correct(const QuantizedTensor& q, const Tensor& original, CorrectionMode mode,
                               std::vector<BiasCorrection>* measured = nullptr) {
  if (mode == CorrectionMode::None) return q;
  const auto corrections = measure_bias(original, dequantize(q), q.granularity, mode);
  QuantizedTensor out = q;
  std::visit(
      [&](auto& ps) {
        for (std::size_t c = 0; c < ps.size(); ++c) ps[c] = apply_correction(ps[c], corrections[c]);
      },
      out.params);
  if (measured) *measured = corrections;
  return out;
}

}  // namespace qkit
