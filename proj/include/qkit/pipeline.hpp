#pragma once

#include <qkit/bias_correction.hpp>
#include <qkit/breakpoint_solver.hpp>
#include <qkit/detail/parallel.hpp>
#include <qkit/detail/random.hpp>
#include <qkit/distributions.hpp>
#include <qkit/error_analysis.hpp>
#include <qkit/quantized_tensor.hpp>
#include <qkit/recipe.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

namespace qkit {

/// What the pipeline decided for one channel (or the whole layer).
struct ChannelRecord {
  std::size_t index = 0;
  double bound = 0.0;
  std::optional<double> distribution_scale;
  std::optional<BreakpointSolution> solution;
  std::optional<BiasCorrection> correction;
  double mse = 0.0;
};

struct QuantizationResult {
  QuantizedTensor tensor;
  std::vector<ChannelRecord> channels;
};

inline constexpr int kDefaultGridResolution = 100;

/// Breakpoints for one slice following the recipe. Slices without spread
/// (constant or all-zero) get the midpoint breakpoint, which makes PWLQ
/// coincide with a uniform grid.
inline BreakpointSolution choose_breakpoints(const ChannelView& values, const Recipe& recipe, double m,
                                             std::optional<double>* fitted_scale = nullptr) {
  const auto fallback = [&] {
    BreakpointSolution s;
    s.bits = recipe.bits;
    s.bound = m;
    s.method = recipe.breakpoint_method;
    for (int j = 1; j <= recipe.breakpoints; ++j) s.breakpoints.push_back(m * j / (recipe.breakpoints + 1));
    s.error = empirical_mse(values, make_pwlq_params(recipe.bits, m, s.breakpoints));
    return s;
  };
  if (recipe.breakpoint_method == BreakpointMethod::EmpiricalGrid) {
    if (!(m > 0.0)) return fallback();
    return empirical_grid(values, recipe.bits, recipe.breakpoints, kDefaultGridResolution);
  }
  std::optional<DistributionModel> model;
  try {
    model = fit_distribution(values, recipe.distribution);
  } catch (const data_error&) {
    return fallback();
  }
  if (fitted_scale) *fitted_scale = model->scale();
  SolverConfig cfg;
  cfg.method = recipe.breakpoint_method;
  if (recipe.breakpoints == 1) return solve_breakpoint(*model, recipe.bits, m, cfg);
  return solve_multi(*model, recipe.bits, m, recipe.breakpoints, cfg);
}

/// Quantizes `t` according to `recipe`, channel by channel when requested.
inline QuantizationResult quantize_with_recipe(const Tensor& t, const Recipe& recipe) {
  recipe.validate();
  const auto views = detail::parameter_views(t, recipe.granularity);
  QuantizationResult out;
  out.channels.resize(views.size());

  if (recipe.scheme == Scheme::Uniform) {
    std::vector<QuantParams> ps(views.size());
    detail::parallel_for(views.size(), [&](std::size_t c) {
      const double m = stats(views[c]).absmax;
      ps[c] = symmetric_params(recipe.bits, m);
      out.channels[c].index = c;
      out.channels[c].bound = m;
    });
    out.tensor = quantize_uniform(t, std::move(ps), recipe.granularity);
  } else {
    std::vector<PwlqParams> ps(views.size());
    detail::parallel_for(views.size(), [&](std::size_t c) {
      const double absmax = stats(views[c]).absmax;
      const double m = absmax > 0.0 ? absmax : 1.0;
      auto& rec = out.channels[c];
      rec.index = c;
      rec.bound = m;
      auto sol = choose_breakpoints(views[c], recipe, m, &rec.distribution_scale);
      ps[c] = make_pwlq_params(recipe.bits, m, sol.breakpoints);
      rec.solution = std::move(sol);
    });
    out.tensor = quantize_pwlq(t, std::move(ps), recipe.granularity);
  }

  if (recipe.bias_correction != CorrectionMode::None) {
    std::vector<BiasCorrection> measured;
    out.tensor = correct(out.tensor, t, recipe.bias_correction, &measured);
    for (std::size_t c = 0; c < measured.size(); ++c) out.channels[c].correction = measured[c];
  }

  const auto deq = dequantize(out.tensor);
  const auto dv = detail::parameter_views(deq, recipe.granularity);
  for (std::size_t c = 0; c < views.size(); ++c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < views[c].size(); ++i) {
      const double e = static_cast<double>(dv[c][i]) - views[c][i];
      acc += e * e;
    }
    out.channels[c].mse = acc / static_cast<double>(views[c].size());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Breakpoint sweeps
// ---------------------------------------------------------------------------

struct SweepPoint {
  int bits = 0;
  double breakpoint = 0.0;
  double pwlq_mse = 0.0;
  double uniform_mse = 0.0;
};

/// Measured MSE of single-breakpoint PWLQ at `points` breakpoints evenly
/// spaced in (0, m/2), alongside the b-bit uniform MSE on [-m, m].
template <class Range>
std::vector<SweepPoint> breakpoint_sweep(const Range& values, int bits, int points = 100) {
  detail::require(points >= 1, "sweep needs at least one point");
  const double m = stats_of(values).absmax;
  if (!(m > 0.0)) throw data_error("degenerate tensor: all values are zero");
  const double uni = empirical_mse(values, symmetric_params(bits, m));
  std::vector<SweepPoint> out(static_cast<std::size_t>(points));
  detail::parallel_for(out.size(), [&](std::size_t j) {
    const double p = 0.5 * m * static_cast<double>(j + 1) / (points + 1);
    out[j] = {bits, p, empirical_mse(values, make_pwlq_params(bits, m, p)), uni};
  });
  return out;
}

/// True when the sequence falls, then rises (plateaus allowed).
inline bool is_unimodal(std::span<const double> ys) {
  std::size_t i = 0;
  while (i + 1 < ys.size() && ys[i + 1] <= ys[i]) ++i;
  while (i + 1 < ys.size() && ys[i + 1] >= ys[i]) ++i;
  return i + 1 >= ys.size();
}

/// Linear-interpolated quantile of sorted data.
inline double sorted_quantile(std::span<const double> sorted, double q) {
  detail::require(!sorted.empty(), "quantile of an empty set");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct PerturbationLevel {
  double fraction = 0.0;
  std::vector<double> mse;  ///< one entry per trial, in trial order
  double median = 0.0;
  double q25 = 0.0;
  double q75 = 0.0;
};

struct PerturbationStudy {
  BreakpointSolution optimum;
  double optimum_mse = 0.0;
  std::vector<PerturbationLevel> levels;
};

/// Perturbs the layer-level optimal breakpoints by each fraction over
/// `trials` seeded draws and records the measured MSE of every draw.
inline PerturbationStudy perturbation_study(const Tensor& t, const Recipe& recipe, std::span<const double> fractions,
                                            int trials, std::uint64_t seed) {
  recipe.validate();
  detail::require(!fractions.empty(), "perturbation study needs at least one level");
  detail::require(trials >= 1, "perturbation study needs at least one trial");
  const auto all = whole_view(t);
  const double m = stats(all).absmax;
  if (!(m > 0.0)) throw data_error("degenerate tensor: all values are zero");

  PerturbationStudy study;
  study.optimum = choose_breakpoints(all, recipe, m);
  study.optimum_mse = empirical_mse(t, make_pwlq_params(recipe.bits, m, study.optimum.breakpoints));
  for (std::size_t li = 0; li < fractions.size(); ++li) {
    PerturbationLevel lvl;
    lvl.fraction = fractions[li];
    lvl.mse.resize(static_cast<std::size_t>(trials));
    detail::parallel_for(lvl.mse.size(), [&](std::size_t k) {
      const auto p = perturb_breakpoints(study.optimum, fractions[li], detail::derive_seed(seed, li, k));
      lvl.mse[k] = empirical_mse(t, make_pwlq_params(recipe.bits, m, p.breakpoints));
    });
    auto sorted = lvl.mse;
    std::sort(sorted.begin(), sorted.end());
    lvl.median = sorted_quantile(sorted, 0.5);
    lvl.q25 = sorted_quantile(sorted, 0.25);
    lvl.q75 = sorted_quantile(sorted, 0.75);
    study.levels.push_back(std::move(lvl));
  }
  return study;
}

}  // namespace qkit
