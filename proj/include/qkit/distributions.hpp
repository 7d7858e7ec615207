#pragma once

#include <qkit/error.hpp>
#include <qkit/tensor.hpp>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <string_view>

namespace qkit {

enum class DistributionKind { Gaussian, Laplacian };

inline std::string_view to_string(DistributionKind k) {
  return k == DistributionKind::Gaussian ? "gaussian" : "laplacian";
}

inline DistributionKind parse_distribution(std::string_view s) {
  if (s == "gaussian") return DistributionKind::Gaussian;
  if (s == "laplacian") return DistributionKind::Laplacian;
  throw invalid_argument("unknown distribution '" + std::string(s) + "'");
}

/// Zero-centred symmetric bell-shaped model truncated to [-m, m].
///
/// `pdf`/`cdf` describe the untruncated law. The `truncated_*` family
/// renormalises onto [-m, m] so that F(-m) = 0 and F(m) = 1, which is what the
/// breakpoint error model integrates against.
class DistributionModel {
public:
  DistributionModel(DistributionKind kind, double scale, double bound)
      : kind_(kind), scale_(scale), bound_(bound) {
    detail::require(scale > 0.0 && std::isfinite(scale), "distribution scale must be positive and finite");
    detail::require(bound > 0.0 && std::isfinite(bound), "truncation bound must be positive and finite");
    lower_ = cdf(-bound_);
    mass_ = 1.0 - 2.0 * lower_;
  }

  static DistributionModel gaussian(double sigma, double bound) {
    return {DistributionKind::Gaussian, sigma, bound};
  }
  static DistributionModel laplacian(double b, double bound) { return {DistributionKind::Laplacian, b, bound}; }

  DistributionKind kind() const { return kind_; }
  double scale() const { return scale_; }
  double bound() const { return bound_; }

  DistributionModel with_bound(double bound) const { return {kind_, scale_, bound}; }

  double pdf(double r) const {
    if (kind_ == DistributionKind::Gaussian) {
      const double z = r / scale_;
      return std::exp(-0.5 * z * z) / (scale_ * std::sqrt(2.0 * std::numbers::pi));
    }
    return std::exp(-std::abs(r) / scale_) / (2.0 * scale_);
  }

  /// d/dr pdf. For the Laplacian the right derivative is used at r = 0.
  double pdf_derivative(double r) const {
    if (kind_ == DistributionKind::Gaussian) return -r / (scale_ * scale_) * pdf(r);
    return (r < 0.0 ? 1.0 : -1.0) / scale_ * pdf(r);
  }

  double cdf(double r) const {
    if (kind_ == DistributionKind::Gaussian) return 0.5 * std::erfc(-r / (scale_ * std::numbers::sqrt2));
    // evaluate each tail directly so both halves keep full relative precision
    return r < 0.0 ? 0.5 * std::exp(r / scale_) : 1.0 - 0.5 * std::exp(-r / scale_);
  }

  double truncated_pdf(double r) const { return std::abs(r) > bound_ ? 0.0 : pdf(r) / mass_; }
  double truncated_pdf_derivative(double r) const {
    return std::abs(r) > bound_ ? 0.0 : pdf_derivative(r) / mass_;
  }
  double truncated_cdf(double r) const {
    if (r <= -bound_) return 0.0;
    if (r >= bound_) return 1.0;
    // symmetric form keeps F(r) = 1 - F(-r) exact for the positive half
    if (r > 0.0) return 0.5 + (cdf(r) - 0.5) / mass_;
    return (cdf(r) - lower_) / mass_;
  }

  /// Probability mass of the truncated law on the magnitude band lo < |r| <= hi.
  double magnitude_mass(double lo, double hi) const {
    return 2.0 * (truncated_cdf(hi) - truncated_cdf(lo));
  }

  /// Inverse of truncated_cdf.
  double truncated_quantile(double u) const {
    detail::require(u >= 0.0 && u <= 1.0, "quantile level outside [0, 1]");
    if (u <= 0.0) return -bound_;
    if (u >= 1.0) return bound_;
    if (kind_ == DistributionKind::Laplacian) {
      const double target = lower_ + u * mass_;
      return target < 0.5 ? scale_ * std::log(2.0 * target) : -scale_ * std::log(2.0 * (1.0 - target));
    }
    double lo = -bound_, hi = bound_;
    double x = 0.0;
    for (int it = 0; it < 200; ++it) {
      const double g = truncated_cdf(x) - u;
      if (g > 0.0) hi = x; else lo = x;
      const double d = truncated_pdf(x);
      double next = d > 0.0 ? x - g / d : 0.5 * (lo + hi);
      if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
      if (std::abs(next - x) <= 1e-15 * std::max(1.0, std::abs(x))) return next;
      x = next;
    }
    return x;
  }

private:
  DistributionKind kind_;
  double scale_;
  double bound_;
  double mass_ = 1.0;
  double lower_ = 0.0;
};

/// Fits a zero-centred model to data: the scale is the population standard
/// deviation (Gaussian) or mean absolute deviation (Laplacian), both about the
/// sample mean; the truncation bound is the absolute maximum.
template <class Range>
DistributionModel fit_distribution(const Range& values, DistributionKind kind) {
  const auto st = stats_of(values);
  double scale = st.stddev;
  if (kind == DistributionKind::Laplacian) {
    double acc = 0.0;
    for (std::size_t i = 0; i < st.count; ++i) acc += std::abs(static_cast<double>(values[i]) - st.mean);
    scale = acc / static_cast<double>(st.count);
  }
  if (!(scale > 0.0) || !(st.absmax > 0.0)) throw data_error("degenerate scale: data has no spread");
  return {kind, scale, st.absmax};
}

inline DistributionModel fit(const Tensor& t, DistributionKind kind) { return fit_distribution(t.data(), kind); }

namespace detail {

inline double draw(const DistributionModel& d, std::mt19937_64& rng) {
  if (d.kind() == DistributionKind::Gaussian) return std::normal_distribution<double>(0.0, d.scale())(rng);
  // inverse CDF on u in (-1/2, 1/2)
  double u;
  do {
    u = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
  } while (u == -0.5);
  return -d.scale() * std::copysign(std::log1p(-2.0 * std::abs(u)), u);
}

}  // namespace detail

/// n draws from the untruncated law; deterministic for a fixed seed.
inline Tensor sample(const DistributionModel& d, std::size_t n, std::uint64_t seed) {
  detail::require(n > 0, "sample count must be positive");
  std::mt19937_64 rng(seed);
  std::vector<float> out(n);
  for (auto& v : out) v = static_cast<float>(detail::draw(d, rng));
  return Tensor(std::move(out));
}

/// n draws from the law truncated to [-bound, bound] (rejection sampling).
inline Tensor sample_truncated(const DistributionModel& d, std::size_t n, std::uint64_t seed) {
  detail::require(n > 0, "sample count must be positive");
  std::mt19937_64 rng(seed);
  std::vector<float> out(n);
  for (auto& v : out) {
    float x;
    do {
      x = static_cast<float>(detail::draw(d, rng));
    } while (std::abs(x) > d.bound());
    v = x;
  }
  return Tensor(std::move(out));
}

/// n stratified points F^-1((i + 1/2) / n) of the truncated law.
inline Tensor sample_stratified(const DistributionModel& d, std::size_t n) {
  detail::require(n > 0, "sample count must be positive");
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = static_cast<float>(d.truncated_quantile((static_cast<double>(i) + 0.5) / static_cast<double>(n)));
  return Tensor(std::move(out));
}

}  // namespace qkit
