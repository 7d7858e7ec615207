#pragma once

#include <qkit/distributions.hpp>
#include <qkit/error.hpp>
#include <qkit/error_analysis.hpp>
#include <qkit/pwlq.hpp>
#include <qkit/quantized_tensor.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace qkit {

enum class BreakpointMethod { GradientDescent, ClosedFormGaussian, EmpiricalGrid };

inline std::string_view to_string(BreakpointMethod m) {
  switch (m) {
    case BreakpointMethod::GradientDescent: return "gradient-descent";
    case BreakpointMethod::ClosedFormGaussian: return "closed-form";
    case BreakpointMethod::EmpiricalGrid: return "grid";
  }
  return "?";
}

inline BreakpointMethod parse_breakpoint_method(std::string_view s) {
  if (s == "gradient-descent" || s == "gd") return BreakpointMethod::GradientDescent;
  if (s == "closed-form") return BreakpointMethod::ClosedFormGaussian;
  if (s == "grid") return BreakpointMethod::EmpiricalGrid;
  throw invalid_argument("unknown breakpoint method '" + std::string(s) + "'");
}

struct SolverConfig {
  BreakpointMethod method = BreakpointMethod::GradientDescent;
  int max_iterations = 10000;
  /// Dimensionless step on the normalised gradient dE/dp / (2 C(b-1)).
  double step = 0.01;
  /// Stop once |dE/dp| / (2 C(b-1)) <= tolerance * m.
  double tolerance = 1e-10;
  int grid_resolution = 100;
  int breakpoints = 1;
  double perturbation = 0.0;

  void validate() const {
    detail::require(max_iterations > 0, "max iterations must be positive");
    detail::require(step > 0.0, "step size must be positive");
    detail::require(tolerance > 0.0, "tolerance must be positive");
    detail::require(grid_resolution >= 1, "grid resolution must be positive");
    detail::require(breakpoints >= 1, "breakpoint count must be at least 1");
    detail::require(perturbation >= 0.0 && perturbation <= 0.5, "perturbation fraction must lie in [0, 0.5]");
  }
};

struct BreakpointSolution {
  std::vector<double> breakpoints;
  int bits = 0;
  double bound = 0.0;
  /// Expected (analytic methods) or empirical (grid) squared error; NaN when
  /// the breakpoints were modified without re-evaluation.
  double error = 0.0;
  BreakpointMethod method = BreakpointMethod::GradientDescent;
  int iterations = 0;
  /// Stationarity residual 2mF(p) - (2m - p + m(m - 2p) f(p)); K = 1 analytic only.
  double residual = 0.0;
  /// Set when the closed-form approximation was out of range and gradient descent ran instead.
  bool fell_back = false;
  /// Set when the projected iteration stopped on the [0.01m, 0.49m] boundary.
  bool at_bound = false;

  double breakpoint() const { return breakpoints.front(); }
};

inline constexpr double kBreakpointLowerFraction = 0.01;
inline constexpr double kBreakpointUpperFraction = 0.49;
inline constexpr double kBreakpointInitFraction = 0.3;
inline constexpr double kClosedFormMinRatio = 2.0;
inline constexpr double kClosedFormMaxRatio = 5.0;

/// Gaussian approximation of the optimal breakpoint in units of sigma,
/// ln(0.8614 m + 0.6079) with m = bound / sigma. Only trusted for
/// m in [2, 5]; returns nullopt elsewhere.
inline std::optional<double> closed_form_gaussian(double m_over_sigma) {
  if (!(m_over_sigma >= kClosedFormMinRatio && m_over_sigma <= kClosedFormMaxRatio)) return std::nullopt;
  return std::log(0.8614 * m_over_sigma + 0.6079);
}

namespace detail {

inline BreakpointSolution gradient_descent(const DistributionModel& d, int bits, double m, const SolverConfig& cfg) {
  const double lo = kBreakpointLowerFraction * m, hi = kBreakpointUpperFraction * m;
  double p = kBreakpointInitFraction * m;
  double step = cfg.step;
  double g = normalized_gradient(d, m, p);
  BreakpointSolution sol;
  sol.bits = bits;
  sol.bound = m;
  sol.method = BreakpointMethod::GradientDescent;
  int it = 0;
  for (; it < cfg.max_iterations && std::abs(g) > cfg.tolerance * m; ++it) {
    const double next = std::clamp(p - step * g, lo, hi);
    if (next == p) {
      sol.at_bound = true;
      break;
    }
    const double g_next = normalized_gradient(d, m, next);
    // overshoot across the minimum: shrink the step and retry
    if (g_next * g < 0.0 && std::abs(g_next) > std::abs(g)) {
      step *= 0.5;
      continue;
    }
    p = next;
    g = g_next;
  }
  if (!sol.at_bound && std::abs(g) > cfg.tolerance * m)
    throw convergence_error("gradient descent did not converge in " + std::to_string(cfg.max_iterations) +
                            " iterations (|gradient| = " + std::to_string(std::abs(g)) + ")");
  sol.breakpoints = {p};
  sol.iterations = it;
  sol.residual = stationarity_residual(d, m, p);
  sol.error = expected_pwlq_error(d, bits, m, p);
  return sol;
}

}  // namespace detail

/// Optimal single breakpoint in (0, m/2) for the model truncated to [-m, m].
inline BreakpointSolution solve_breakpoint(const DistributionModel& model, int bits, double m,
                                           const SolverConfig& cfg = {}) {
  cfg.validate();
  detail::require(bits >= 2, "PWLQ bit width must be at least 2");
  detail::require(m > 0.0 && std::isfinite(m), "range bound must be positive");
  detail::require(cfg.breakpoints == 1, "analytic solvers handle a single breakpoint; use solve_multi");
  const auto d = detail::rebound(model, m);
  switch (cfg.method) {
    case BreakpointMethod::GradientDescent: return detail::gradient_descent(d, bits, m, cfg);
    case BreakpointMethod::ClosedFormGaussian: {
      detail::require(d.kind() == DistributionKind::Gaussian, "closed-form breakpoint needs a Gaussian model");
      const auto normalized = closed_form_gaussian(m / d.scale());
      if (!normalized) {
        auto sol = detail::gradient_descent(d, bits, m, cfg);
        sol.fell_back = true;
        return sol;
      }
      const double p = *normalized * d.scale();
      BreakpointSolution sol;
      sol.bits = bits;
      sol.bound = m;
      sol.method = BreakpointMethod::ClosedFormGaussian;
      sol.breakpoints = {p};
      sol.residual = stationarity_residual(d, m, p);
      sol.error = expected_pwlq_error(d, bits, m, p);
      return sol;
    }
    case BreakpointMethod::EmpiricalGrid:
      throw invalid_argument("grid search needs data; use empirical_grid");
  }
  throw invalid_argument("unknown breakpoint method");
}

namespace detail {

/// Solves the k x k system a x = b in place (partial pivoting); false if singular.
template <std::size_t N>
bool solve_linear(std::array<std::array<double, N>, N>& a, std::array<double, N>& b, std::size_t k) {
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < k; ++r)
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    if (!(std::abs(a[piv][c]) > 1e-300)) return false;
    std::swap(a[c], a[piv]);
    std::swap(b[c], b[piv]);
    for (std::size_t r = c + 1; r < k; ++r) {
      const double f = a[r][c] / a[c][c];
      for (std::size_t j = c; j < k; ++j) a[r][j] -= f * a[c][j];
      b[r] -= f * b[c];
    }
  }
  for (std::size_t c = k; c-- > 0;) {
    for (std::size_t j = c + 1; j < k; ++j) b[c] -= a[c][j] * b[j];
    b[c] /= a[c][c];
  }
  return true;
}

inline bool feasible(const std::vector<double>& t, double m, double gap) {
  double prev = 0.0;
  for (double x : t) {
    if (!(x >= prev + gap)) return false;
    prev = x;
  }
  return t.back() <= m - gap;
}

}  // namespace detail

inline constexpr int kMaxBreakpoints = 3;

/// Ordered K-breakpoint minimiser of the generalised expected error.
/// Damped Newton on the analytic gradient (finite-difference Hessian) with a
/// backtracking line search that keeps the breakpoints ordered inside (0, m).
inline BreakpointSolution solve_multi(const DistributionModel& model, int bits, double m, int k,
                                      const SolverConfig& cfg = {}, std::optional<std::vector<double>> start = {}) {
  cfg.validate();
  detail::require(k >= 1 && k <= kMaxBreakpoints, "breakpoint count must lie in [1, 3]");
  detail::require(bits >= 2, "PWLQ bit width must be at least 2");
  detail::require(m > 0.0 && std::isfinite(m), "range bound must be positive");
  const auto d = detail::rebound(model, m);
  const auto kk = static_cast<std::size_t>(k);
  const double gap = 1e-9 * m;
  const double c = error_constant(bits - 1);

  std::vector<double> t(kk);
  if (start) {
    detail::require(start->size() == kk, "start vector has the wrong length");
    t = *start;
    detail::require(detail::feasible(t, m, gap), "start vector must be ordered inside (0, m)");
  } else {
    for (std::size_t j = 0; j < kk; ++j)
      t[j] = kBreakpointInitFraction * m * 2.0 * static_cast<double>(j + 1) / static_cast<double>(kk + 1);
  }

  auto objective = [&](const std::vector<double>& x) { return expected_multi_error(d, bits, m, x) / c; };
  auto gradient = [&](const std::vector<double>& x) {
    auto g = expected_multi_gradient(d, bits, m, x);
    for (auto& v : g) v /= c;
    return g;
  };
  auto gnorm = [](const std::vector<double>& g) {
    double n = 0.0;
    for (double v : g) n = std::max(n, std::abs(v));
    return n;
  };

  double f = objective(t);
  auto g = gradient(t);
  int it = 0;
  for (; it < cfg.max_iterations && gnorm(g) > cfg.tolerance * m; ++it) {
    // Newton direction from a central-difference Hessian of the analytic gradient
    std::array<std::array<double, kMaxBreakpoints>, kMaxBreakpoints> h{};
    std::array<double, kMaxBreakpoints> dir{};
    const double fd = 1e-6 * m;
    bool newton = true;
    for (std::size_t j = 0; j < kk && newton; ++j) {
      auto up = t, dn = t;
      up[j] += fd;
      dn[j] -= fd;
      if (!detail::feasible(up, m, gap) || !detail::feasible(dn, m, gap)) {
        newton = false;
        break;
      }
      const auto gu = gradient(up), gd = gradient(dn);
      for (std::size_t i = 0; i < kk; ++i) h[i][j] = (gu[i] - gd[i]) / (2.0 * fd);
    }
    if (newton) {
      for (std::size_t i = 0; i < kk; ++i) {
        dir[i] = -g[i];
        for (std::size_t j = 0; j < i; ++j) h[i][j] = h[j][i] = 0.5 * (h[i][j] + h[j][i]);
      }
      newton = detail::solve_linear(h, dir, kk);
      double slope = 0.0;
      for (std::size_t i = 0; i < kk; ++i) slope += dir[i] * g[i];
      newton = newton && slope < 0.0;
    }
    if (!newton)
      for (std::size_t i = 0; i < kk; ++i) dir[i] = -g[i] * cfg.step;

    double alpha = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 60; ++ls, alpha *= 0.5) {
      std::vector<double> trial(kk);
      for (std::size_t i = 0; i < kk; ++i) trial[i] = t[i] + alpha * dir[i];
      if (!detail::feasible(trial, m, gap)) continue;
      const double ft = objective(trial);
      double slope = 0.0;
      for (std::size_t i = 0; i < kk; ++i) slope += dir[i] * g[i];
      if (ft <= f + 1e-4 * alpha * slope || (ft <= f && gnorm(gradient(trial)) < gnorm(g))) {
        t = std::move(trial);
        f = ft;
        moved = true;
        break;
      }
    }
    if (!moved) break;
    g = gradient(t);
  }
  if (gnorm(g) > cfg.tolerance * m * 1e3)
    throw convergence_error("multi-breakpoint search stalled (|gradient| = " + std::to_string(gnorm(g)) + ")");

  BreakpointSolution sol;
  sol.breakpoints = t;
  sol.bits = bits;
  sol.bound = m;
  sol.error = expected_multi_error(d, bits, m, t);
  sol.method = BreakpointMethod::GradientDescent;
  sol.iterations = it;
  if (k == 1) sol.residual = stationarity_residual(d, m, t[0]);
  return sol;
}

/// Exhaustive search over breakpoint candidates minimising the measured MSE
/// of `values`; the smallest candidate wins ties. K = 1 candidates are
/// (m/2) j / (res + 1); K > 1 candidates are m j / (res + 1), all ordered tuples.
template <class Range>
BreakpointSolution empirical_grid(const Range& values, int bits, int k, int resolution) {
  detail::require(bits >= 2, "PWLQ bit width must be at least 2");
  detail::require(k >= 1 && k <= kMaxBreakpoints, "breakpoint count must lie in [1, 3]");
  detail::require(resolution >= 1, "grid resolution must be positive");
  const auto st = stats_of(values);
  const double m = st.absmax;
  if (!(m > 0.0)) throw data_error("degenerate tensor: all values are zero");

  const double span = k == 1 ? 0.5 * m : m;
  std::vector<double> grid(static_cast<std::size_t>(resolution));
  for (int j = 0; j < resolution; ++j) grid[static_cast<std::size_t>(j)] = span * (j + 1) / (resolution + 1);

  BreakpointSolution best;
  best.bits = bits;
  best.bound = m;
  best.method = BreakpointMethod::EmpiricalGrid;
  best.error = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> idx(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const std::size_t n = grid.size();
  if (idx.size() > n) throw invalid_argument("grid resolution too small for the breakpoint count");
  int evaluated = 0;
  while (true) {
    std::vector<double> t(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) t[i] = grid[idx[i]];
    const double e = empirical_mse(values, make_pwlq_params(bits, m, t));
    ++evaluated;
    if (e < best.error) {
      best.error = e;
      best.breakpoints = t;
    }
    // next combination in lexicographic order (smaller tuples are visited first)
    std::size_t pos = idx.size();
    while (pos > 0 && idx[pos - 1] == n - idx.size() + pos - 1) --pos;
    if (pos == 0) break;
    ++idx[pos - 1];
    for (std::size_t i = pos; i < idx.size(); ++i) idx[i] = idx[i - 1] + 1;
  }
  best.iterations = evaluated;
  return best;
}

/// Scales every breakpoint by (1 + fraction) or (1 - fraction) with a fair
/// random sign per breakpoint, then clamps into (0, m). The error field is
/// set to NaN since no model is available to re-evaluate it.
inline BreakpointSolution perturb_breakpoints(const BreakpointSolution& sol, double fraction, std::uint64_t seed) {
  detail::require(fraction >= 0.0 && fraction <= 0.5, "perturbation fraction must lie in [0, 0.5]");
  if (fraction == 0.0) return sol;
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  BreakpointSolution out = sol;
  const double lo = 1e-9 * sol.bound, hi = sol.bound * (1.0 - 1e-9);
  for (auto& t : out.breakpoints) t = std::clamp(t * (coin(rng) ? 1.0 + fraction : 1.0 - fraction), lo, hi);
  std::sort(out.breakpoints.begin(), out.breakpoints.end());
  for (std::size_t i = 1; i < out.breakpoints.size(); ++i)
    if (out.breakpoints[i] <= out.breakpoints[i - 1])
      out.breakpoints[i] = std::nextafter(out.breakpoints[i - 1], hi);
  out.error = std::numeric_limits<double>::quiet_NaN();
  out.residual = std::numeric_limits<double>::quiet_NaN();
  return out;
}

/// Re-evaluates the expected error of a (possibly perturbed) solution.
inline double expected_error(const BreakpointSolution& sol, const DistributionModel& model) {
  return expected_multi_error(model, sol.bits, sol.bound, sol.breakpoints);
}

}  // namespace qkit
