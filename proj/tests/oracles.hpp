#pragma once

// Reference computations used only by tests. Each one takes a route that is
// independent of the library code it checks.

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <vector>

namespace oracle {

/// Composite trapezoid rule on [a, b] with n panels.
inline double trapezoid(const std::function<double(double)>& f, double a, double b, int n) {
  const double h = (b - a) / n;
  double acc = 0.5 * (f(a) + f(b));
  for (int i = 1; i < n; ++i) acc += f(a + i * h);
  return acc * h;
}

/// Central finite difference.
inline double central_difference(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

/// Arg-min of f on a uniform grid of n interior points of (a, b).
inline double grid_argmin(const std::function<double(double)>& f, double a, double b, int n) {
  double best_x = a, best = INFINITY;
  for (int i = 1; i <= n; ++i) {
    const double x = a + (b - a) * i / (n + 1);
    const double v = f(x);
    if (v < best) {
      best = v;
      best_x = x;
    }
  }
  return best_x;
}

/// Two-pass population mean/std in long double.
struct Moments {
  double mean, stddev;
};
inline Moments two_pass(std::span<const float> v) {
  long double s = 0;
  for (float x : v) s += x;
  const long double mean = s / v.size();
  long double ss = 0;
  for (float x : v) ss += (x - mean) * (x - mean);
  return {static_cast<double>(mean), static_cast<double>(std::sqrt(ss / v.size()))};
}

/// Standard normal pdf written out from its definition.
inline double normal_pdf(double x, double sigma) {
  return std::exp(-x * x / (2 * sigma * sigma)) / (sigma * std::sqrt(2 * M_PI));
}

/// Uniform quantize/dequantize straight from the affine definition:
/// code = round-half-even(clamp(r)/s - z/s), saturated.
inline double uniform_roundtrip(double r, int bits, double lo, double hi, bool symmetric) {
  const double n = std::ldexp(1.0, bits);
  const double s = (hi - lo) / (n - 1);
  const double z = symmetric ? 0.0 : lo;
  const double c = std::min(std::max(r, lo), hi);
  double q = std::nearbyint((c - z) / s);
  const double qmin = symmetric ? -n / 2 : 0, qmax = symmetric ? n / 2 - 1 : n - 1;
  q = std::min(std::max(q, qmin), qmax);
  return s * q + z;
}

/// PWLQ round trip written out from the per-piece definition.
inline double pwlq_roundtrip(double r, int bits, double m, double p) {
  const double a = std::min(std::abs(r), m);
  const double sign = r < 0 ? -1.0 : 1.0;
  if (a <= p) return sign * uniform_roundtrip(a, bits - 1, 0.0, p, false);
  return sign * uniform_roundtrip(a, bits - 1, p, m, false);
}

inline double mse(std::span<const float> v, const std::function<double(double)>& q) {
  double acc = 0;
  for (float x : v) {
    const double e = q(x) - x;
    acc += e * e;
  }
  return acc / v.size();
}

}  // namespace oracle
