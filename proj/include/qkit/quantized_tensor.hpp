#pragma once

#include <qkit/error.hpp>
#include <qkit/pwlq.hpp>
#include <qkit/tensor.hpp>
#include <qkit/uniform_quant.hpp>

#include <cstdint>
#include <variant>
#include <vector>

namespace qkit {

enum class Scheme { Uniform, Pwlq };

inline std::string_view to_string(Scheme s) { return s == Scheme::Uniform ? "uniform" : "pwlq"; }

inline Scheme parse_scheme(std::string_view s) {
  if (s == "uniform") return Scheme::Uniform;
  if (s == "pwlq") return Scheme::Pwlq;
  throw invalid_argument("unknown scheme '" + std::string(s) + "'");
}

/// Integer codes plus the parameters that decode them. Per-layer tensors
/// carry one parameter set; per-channel tensors carry one per slice along
/// `channel_axis`. `regions` is populated exactly when the scheme is PWLQ.
struct QuantizedTensor {
  Shape shape;
  std::size_t channel_axis = 0;
  Granularity granularity = Granularity::PerLayer;
  std::vector<std::int32_t> codes;
  std::vector<std::uint8_t> regions;
  std::variant<std::vector<QuantParams>, std::vector<PwlqParams>> params;

  Scheme scheme() const { return params.index() == 0 ? Scheme::Uniform : Scheme::Pwlq; }
  std::size_t size() const { return codes.size(); }

  const std::vector<QuantParams>& uniform_params() const { return std::get<0>(params); }
  const std::vector<PwlqParams>& pwlq_params() const { return std::get<1>(params); }

  std::size_t param_count() const {
    return std::visit([](const auto& v) { return v.size(); }, params);
  }

  friend bool operator==(const QuantizedTensor&, const QuantizedTensor&) = default;
};

namespace detail {

/// Views matching a parameter list: one view per channel, or the whole tensor.
inline std::vector<ChannelView> parameter_views(const Tensor& t, Granularity g) {
  if (g == Granularity::PerLayer) return {whole_view(t)};
  return channel_views(t);
}

/// Iterates (param index, flat element index) pairs for the code layout of q.
template <class Fn>
void for_each_slot(const Shape& shape, std::size_t axis, Granularity g, Fn&& fn) {
  const std::size_t n = element_count(shape);
  if (g == Granularity::PerLayer) {
    for (std::size_t i = 0; i < n; ++i) fn(std::size_t{0}, i);
    return;
  }
  std::size_t inner = 1;
  for (std::size_t a = axis + 1; a < shape.size(); ++a) inner *= shape[a];
  const std::size_t extent = shape[axis];
  for (std::size_t i = 0; i < n; ++i) fn((i / inner) % extent, i);
}

template <class P>
void check_param_count(const Shape& shape, std::size_t axis, Granularity g, const std::vector<P>& params) {
  const std::size_t want = g == Granularity::PerLayer ? 1 : shape.at(axis);
  if (params.size() != want)
    throw invalid_argument("expected " + std::to_string(want) + " parameter sets, got " +
                           std::to_string(params.size()));
}

}  // namespace detail

inline QuantizedTensor quantize_uniform(const Tensor& t, std::vector<QuantParams> params,
                                        Granularity g = Granularity::PerLayer) {
  detail::check_param_count(t.shape(), t.channel_axis(), g, params);
  QuantizedTensor q;
  q.shape = t.shape();
  q.channel_axis = t.channel_axis();
  q.granularity = g;
  q.codes.resize(t.size());
  detail::for_each_slot(t.shape(), t.channel_axis(), g,
                        [&](std::size_t c, std::size_t i) { q.codes[i] = quantize_value(t[i], params[c]); });
  q.params = std::move(params);
  return q;
}

inline QuantizedTensor quantize_uniform(const Tensor& t, const QuantParams& p) {
  return quantize_uniform(t, std::vector<QuantParams>{p});
}

inline QuantizedTensor quantize_pwlq(const Tensor& t, std::vector<PwlqParams> params,
                                     Granularity g = Granularity::PerLayer) {
  detail::check_param_count(t.shape(), t.channel_axis(), g, params);
  QuantizedTensor q;
  q.shape = t.shape();
  q.channel_axis = t.channel_axis();
  q.granularity = g;
  q.codes.resize(t.size());
  q.regions.resize(t.size());
  detail::for_each_slot(t.shape(), t.channel_axis(), g, [&](std::size_t c, std::size_t i) {
    const auto pc = quantize_pwlq_value(t[i], params[c]);
    q.codes[i] = pc.code;
    q.regions[i] = pc.region;
  });
  q.params = std::move(params);
  return q;
}

inline QuantizedTensor quantize_pwlq(const Tensor& t, const PwlqParams& p) {
  return quantize_pwlq(t, std::vector<PwlqParams>{p});
}

/// Rejects code/region arrays that the parameters cannot decode.
inline void validate(const QuantizedTensor& q) {
  if (q.codes.size() != element_count(q.shape)) throw data_error("code count does not match shape");
  if (q.channel_axis >= q.shape.size()) throw data_error("channel axis out of range");
  std::visit([&](const auto& ps) { detail::check_param_count(q.shape, q.channel_axis, q.granularity, ps); },
             q.params);
  if (q.scheme() == Scheme::Uniform) {
    if (!q.regions.empty()) throw data_error("uniform tensor carries region bits");
    const auto& ps = q.uniform_params();
    detail::for_each_slot(q.shape, q.channel_axis, q.granularity, [&](std::size_t c, std::size_t i) {
      if (!ps[c].contains(q.codes[i])) throw data_error("code outside the quantizer domain");
    });
  } else {
    if (q.regions.size() != q.codes.size()) throw data_error("PWLQ tensor is missing its region bitmap");
    const auto& ps = q.pwlq_params();
    detail::for_each_slot(q.shape, q.channel_axis, q.granularity, [&](std::size_t c, std::size_t i) {
      const auto& p = ps[c];
      if (q.regions[i] >= p.region_count()) throw data_error("region index outside the breakpoint set");
      if (q.codes[i] < p.code_min() || q.codes[i] > p.code_max()) throw data_error("code outside the PWLQ domain");
    });
  }
}

inline Tensor dequantize(const QuantizedTensor& q) {
  validate(q);
  std::vector<float> out(q.codes.size());
  if (q.scheme() == Scheme::Uniform) {
    const auto& ps = q.uniform_params();
    detail::for_each_slot(q.shape, q.channel_axis, q.granularity, [&](std::size_t c, std::size_t i) {
      out[i] = static_cast<float>(dequantize_value(q.codes[i], ps[c]));
    });
  } else {
    const auto& ps = q.pwlq_params();
    detail::for_each_slot(q.shape, q.channel_axis, q.granularity, [&](std::size_t c, std::size_t i) {
      out[i] = static_cast<float>(dequantize_pwlq_value(q.codes[i], q.regions[i], ps[c]));
    });
  }
  return Tensor(q.shape, std::move(out), q.channel_axis);
}

inline Tensor dequantize_uniform(const QuantizedTensor& q) {
  if (q.scheme() != Scheme::Uniform) throw invalid_argument("tensor is not uniformly quantized");
  return dequantize(q);
}

inline Tensor dequantize_pwlq(const QuantizedTensor& q) {
  if (q.scheme() != Scheme::Pwlq) throw invalid_argument("tensor is not PWLQ-quantized");
  return dequantize(q);
}

// ---------------------------------------------------------------------------
// Empirical mean squared error: the brute-force reference every analytic
// error formula is checked against.
// ---------------------------------------------------------------------------

template <class Range>
double empirical_mse(const Range& values, const QuantParams& p) {
  const std::size_t n = std::size(values);
  detail::require(n > 0, "empirical MSE of an empty tensor");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = values[i];
    const double e = dequantize_value(quantize_value(r, p), p) - r;
    acc += e * e;
  }
  return acc / static_cast<double>(n);
}

template <class Range>
double empirical_mse(const Range& values, const PwlqParams& p) {
  const std::size_t n = std::size(values);
  detail::require(n > 0, "empirical MSE of an empty tensor");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = values[i];
    const auto pc = quantize_pwlq_value(r, p);
    const double e = dequantize_pwlq_value(pc.code, pc.region, p) - r;
    acc += e * e;
  }
  return acc / static_cast<double>(n);
}

inline double empirical_mse(const Tensor& t, const QuantParams& p) { return empirical_mse(t.data(), p); }
inline double empirical_mse(const Tensor& t, const PwlqParams& p) { return empirical_mse(t.data(), p); }

/// Mean squared difference between two equally shaped tensors.
inline double mse_between(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw invalid_argument("shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double e = static_cast<double>(a[i]) - b[i];
    acc += e * e;
  }
  return acc / static_cast<double>(a.size());
}

}  // namespace qkit
