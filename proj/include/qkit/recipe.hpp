#pragma once

#include <qkit/bias_correction.hpp>
#include <qkit/breakpoint_solver.hpp>
#include <qkit/distributions.hpp>
#include <qkit/error.hpp>
#include <qkit/quantized_tensor.hpp>

#include <json.hpp>

#include <cstdint>
#include <string>

namespace qkit {

inline constexpr int kRecipeVersion = 1;

/// One weight-quantization configuration.
struct Recipe {
  Scheme scheme = Scheme::Pwlq;
  int bits = 4;
  Granularity granularity = Granularity::PerChannel;
  BreakpointMethod breakpoint_method = BreakpointMethod::GradientDescent;
  int breakpoints = 1;
  CorrectionMode bias_correction = CorrectionMode::None;
  DistributionKind distribution = DistributionKind::Gaussian;
  std::uint64_t seed = 0;

  void validate() const {
    detail::require(bits >= 2 && bits <= 8, "bit width must lie in [2, 8]");
    detail::require(breakpoints >= 1 && breakpoints <= kMaxBreakpoints, "breakpoint count must lie in [1, 3]");
    detail::require(!(breakpoint_method == BreakpointMethod::ClosedFormGaussian &&
                      distribution != DistributionKind::Gaussian),
                    "the closed-form breakpoint assumes a Gaussian distribution");
    detail::require(!(breakpoint_method == BreakpointMethod::ClosedFormGaussian && breakpoints != 1),
                    "the closed-form breakpoint covers a single breakpoint only");
  }

  friend bool operator==(const Recipe&, const Recipe&) = default;
};

inline nlohmann::json to_json(const Recipe& r) {
  return {
      {"scheme", to_string(r.scheme)},
      {"bits", r.bits},
      {"granularity", to_string(r.granularity)},
      {"breakpoint_method", to_string(r.breakpoint_method)},
      {"breakpoints", r.breakpoints},
      {"bias_correction", to_string(r.bias_correction)},
      {"distribution", to_string(r.distribution)},
      {"seed", r.seed},
  };
}

inline Recipe recipe_from_json(const nlohmann::json& j) {
  try {
    Recipe r;
    r.scheme = parse_scheme(j.at("scheme").get<std::string>());
    r.bits = j.at("bits").get<int>();
    r.granularity = parse_granularity(j.at("granularity").get<std::string>());
    r.breakpoint_method = parse_breakpoint_method(j.at("breakpoint_method").get<std::string>());
    r.breakpoints = j.at("breakpoints").get<int>();
    r.bias_correction = parse_correction_mode(j.at("bias_correction").get<std::string>());
    r.distribution = parse_distribution(j.at("distribution").get<std::string>());
    r.seed = j.at("seed").get<std::uint64_t>();
    r.validate();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw invalid_argument(std::string("malformed recipe: ") + e.what());
  }
}

}  // namespace qkit
