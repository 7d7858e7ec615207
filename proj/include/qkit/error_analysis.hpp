#pragma once

#include <qkit/distributions.hpp>
#include <qkit/error.hpp>
#include <qkit/uniform_quant.hpp>

#include <cmath>
#include <span>
#include <vector>

namespace qkit {

// Closed-form expected squared error of PWLQ under a symmetric model f,
// truncated and renormalised to [-m, m]. Each piece contributes
// C(b-1) * width^2 * mass, i.e. the uniform-residual model per piece.

namespace detail {

inline DistributionModel rebound(const DistributionModel& d, double m) {
  return d.bound() == m ? d : d.with_bound(m);
}

inline void check_breakpoint(int bits, double m, double p) {
  require(bits >= 2, "PWLQ bit width must be at least 2");
  require(m > 0.0, "range bound must be positive");
  require(p > 0.0 && p < m, "breakpoint must lie in (0, m)");
}

}  // namespace detail

/// Unsimplified sum over the four pieces:
/// C(b-1) { (m-p)^2 [F(-p) + 1 - F(p)] + p^2 [F(p) - F(-p)] }.
inline double expected_pwlq_error_pieces(const DistributionModel& model, int bits, double m, double p) {
  detail::check_breakpoint(bits, m, p);
  const auto d = detail::rebound(model, m);
  const double fp = d.truncated_cdf(p), fn = d.truncated_cdf(-p);
  return error_constant(bits - 1) * ((m - p) * (m - p) * (fn + 1.0 - fp) + p * p * (fp - fn));
}

/// C(b-1) { (m-p)^2 + m (2p - m) [2F(p) - 1] }.
inline double expected_pwlq_error(const DistributionModel& model, int bits, double m, double p) {
  detail::check_breakpoint(bits, m, p);
  const auto d = detail::rebound(model, m);
  return error_constant(bits - 1) * ((m - p) * (m - p) + m * (2.0 * p - m) * (2.0 * d.truncated_cdf(p) - 1.0));
}

struct ErrorDerivatives {
  double first = 0.0;
  double second = 0.0;
};

/// Bracketed term of the first derivative, i.e. dE/dp / (2 C(b-1)):
/// p - 2m + 2m F(p) + m (2p - m) f(p). Zero exactly at the optimum.
inline double normalized_gradient(const DistributionModel& model, double m, double p) {
  const auto d = detail::rebound(model, m);
  return p - 2.0 * m + 2.0 * m * d.truncated_cdf(p) + m * (2.0 * p - m) * d.truncated_pdf(p);
}

inline ErrorDerivatives pwlq_error_derivatives(const DistributionModel& model, int bits, double m, double p) {
  detail::check_breakpoint(bits, m, p);
  const auto d = detail::rebound(model, m);
  const double k = 2.0 * error_constant(bits - 1);
  return {k * normalized_gradient(d, m, p),
          k * (1.0 + 4.0 * m * d.truncated_pdf(p) + m * (2.0 * p - m) * d.truncated_pdf_derivative(p))};
}

/// Residual of the stationarity condition 2mF(p) = 2m - p + m(m - 2p) f(p).
inline double stationarity_residual(const DistributionModel& model, double m, double p) {
  const auto d = detail::rebound(model, m);
  return 2.0 * m * d.truncated_cdf(p) - (2.0 * m - p + m * (m - 2.0 * p) * d.truncated_pdf(p));
}

inline constexpr double kStationarityTolerance = 1e-6;

/// Error at a stationary breakpoint, with the optimality condition
/// substituted: C(b-1) [ -p^2 + m p - m (m - 2p)^2 f(p) ].
inline double optimal_error_closed_form(const DistributionModel& model, int bits, double m, double p_star) {
  detail::check_breakpoint(bits, m, p_star);
  const auto d = detail::rebound(model, m);
  const double res = stationarity_residual(d, m, p_star);
  if (!(std::abs(res) <= kStationarityTolerance * std::max(1.0, m)))
    throw invalid_argument("breakpoint is not stationary (residual " + std::to_string(res) + ")");
  const double g = m - 2.0 * p_star;
  return error_constant(bits - 1) * (-p_star * p_star + m * p_star - m * g * g * d.truncated_pdf(p_star));
}

/// C(b-1) / (16 C(b)) = ((2^b - 1) / (2^(b-1) - 1))^2 / 16.
inline double bound_ratio(int bits) {
  detail::require(bits >= 2, "bound ratio needs b >= 2");
  const double num = std::ldexp(1.0, bits) - 1.0;
  const double den = std::ldexp(1.0, bits - 1) - 1.0;
  return num * num / (den * den) / 16.0;
}

/// Expected error of b-bit uniform quantization on [-m, m]: 4 C(b) m^2.
inline double expected_uniform_error_symmetric(int bits, double m) { return expected_uniform_error(bits, -m, m); }

// ---------------------------------------------------------------------------
// K-breakpoint generalisation: regions [t_i, t_{i+1}] on the magnitude axis.
// ---------------------------------------------------------------------------

namespace detail {

inline void check_breakpoints(int bits, double m, std::span<const double> t) {
  require(bits >= 2, "PWLQ bit width must be at least 2");
  require(m > 0.0, "range bound must be positive");
  require(!t.empty(), "at least one breakpoint required");
  double prev = 0.0;
  for (double x : t) {
    require(x > prev && x < m, "breakpoints must be strictly increasing inside (0, m)");
    prev = x;
  }
}

}  // namespace detail

/// C(b-1) * sum_i (t_{i+1} - t_i)^2 * P(t_i < |r| <= t_{i+1}).
inline double expected_multi_error(const DistributionModel& model, int bits, double m,
                                   std::span<const double> breakpoints) {
  detail::check_breakpoints(bits, m, breakpoints);
  const auto d = detail::rebound(model, m);
  double acc = 0.0, lo = 0.0;
  for (std::size_t i = 0; i <= breakpoints.size(); ++i) {
    const double hi = i == breakpoints.size() ? m : breakpoints[i];
    acc += (hi - lo) * (hi - lo) * d.magnitude_mass(lo, hi);
    lo = hi;
  }
  return error_constant(bits - 1) * acc;
}

/// Gradient of expected_multi_error with respect to each breakpoint.
inline std::vector<double> expected_multi_gradient(const DistributionModel& model, int bits, double m,
                                                   std::span<const double> t) {
  detail::check_breakpoints(bits, m, t);
  const auto d = detail::rebound(model, m);
  const std::size_t k = t.size();
  auto edge = [&](std::size_t i) { return i == 0 ? 0.0 : (i == k + 1 ? m : t[i - 1]); };
  std::vector<double> g(k);
  for (std::size_t j = 1; j <= k; ++j) {
    const double below = edge(j) - edge(j - 1), above = edge(j + 1) - edge(j);
    const double p_below = d.magnitude_mass(edge(j - 1), edge(j));
    const double p_above = d.magnitude_mass(edge(j), edge(j + 1));
    const double f = d.truncated_pdf(edge(j));
    g[j - 1] = error_constant(bits - 1) *
               (2.0 * below * p_below - 2.0 * above * p_above + 2.0 * f * (below * below - above * above));
  }
  return g;
}

/// Analytic and measured error figures for one quantized channel or layer.
struct ErrorReport {
  int bits = 0;
  double bound = 0.0;
  double breakpoint = 0.0;
  double expected_error = 0.0;
  double first_derivative = 0.0;
  double second_derivative = 0.0;
  double empirical_mse = 0.0;
  double uniform_expected_error = 0.0;
  double uniform_empirical_mse = 0.0;
  double bound_ratio = 0.0;
};

/// Analytic part of an ErrorReport; empirical fields are left to the caller.
inline ErrorReport analytic_report(const DistributionModel& model, int bits, double m, double p) {
  ErrorReport r;
  r.bits = bits;
  r.bound = m;
  r.breakpoint = p;
  r.expected_error = expected_pwlq_error(model, bits, m, p);
  const auto der = pwlq_error_derivatives(model, bits, m, p);
  r.first_derivative = der.first;
  r.second_derivative = der.second;
  r.uniform_expected_error = expected_uniform_error_symmetric(bits, m);
  r.bound_ratio = bound_ratio(bits);
  return r;
}

}  // namespace qkit
