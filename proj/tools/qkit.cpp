// qkit: command-line front end for the quantization toolkit.
//
//   qkit quantize  --input w.qtns [recipe flags] --out-dir out
//   qkit analyze   --original w.qtns --quantized out/w.qtnq --out-dir out
//   qkit sweep     --input w.qtns --levels 5,10,20,30 --trials 100 --out-dir out
//   qkit calibrate --input-dir acts/ --k 10 --out-dir out
//   qkit simulate  --weights out/w.qtnq --activations out/x.qtnq --out-dir out

#include <qkit/qkit.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Raised when an internal oracle check fails under --verbose.
class check_failure : public qkit::error {
public:
  using qkit::error::error;
  const char* kind() const noexcept override { return "check_failure"; }
};

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_json(const fs::path& path, const json& j) { qkit::detail::write_file_atomic(path, j.dump(2) + "\n"); }

fs::path output_path(const std::string& out_dir, const fs::path& input, const std::string& suffix) {
  fs::create_directories(out_dir);
  return fs::path(out_dir) / (input.stem().string() + suffix);
}

json solution_json(const qkit::BreakpointSolution& s) {
  json j = {
      {"breakpoints", s.breakpoints},
      {"method", qkit::to_string(s.method)},
      {"iterations", s.iterations},
      {"fell_back", s.fell_back},
      {"at_bound", s.at_bound},
  };
  j["error"] = std::isfinite(s.error) ? json(s.error) : json(nullptr);
  j["residual"] = std::isfinite(s.residual) ? json(s.residual) : json(nullptr);
  return j;
}

json correction_json(const qkit::BiasCorrection& bc) {
  return {{"mode", qkit::to_string(bc.mode)},
          {"mean_error", bc.mean_error},
          {"scale_ratio", bc.scale_ratio},
          {"reference_mean", bc.reference_mean}};
}

json report_json(const qkit::ErrorReport& r) {
  return {{"bits", r.bits},
          {"bound", r.bound},
          {"breakpoint", r.breakpoint},
          {"expected_error", r.expected_error},
          {"first_derivative", r.first_derivative},
          {"second_derivative", r.second_derivative},
          {"empirical_mse", r.empirical_mse},
          {"uniform_expected_error", r.uniform_expected_error},
          {"uniform_empirical_mse", r.uniform_empirical_mse},
          {"bound_ratio", r.bound_ratio}};
}

json trace_json(const qkit::DatapathTrace& t) {
  std::vector<double> occupancy;
  for (std::size_t r = 0; r < t.macs.size(); ++r) occupancy.push_back(t.occupancy(r));
  return {{"length", t.length},
          {"macs", t.macs},
          {"total_macs", t.total_macs()},
          {"products", t.products},
          {"activation_sums", t.activation_sums},
          {"activation_additions", t.activation_additions},
          {"accumulators", t.accumulator_count()},
          {"fp_operations", t.fp_operations},
          {"region_bits", t.region_bits},
          {"occupancy", occupancy}};
}

std::vector<double> parse_levels(const std::vector<double>& percents) {
  std::vector<double> out;
  for (double p : percents) {
    if (!(p >= 0.0 && p <= 50.0)) throw qkit::invalid_argument("perturbation levels are percentages in [0, 50]");
    out.push_back(p / 100.0);
  }
  return out;
}

// ---------------------------------------------------------------------------

struct RecipeFlags {
  std::string recipe_file;
  std::string scheme = "pwlq";
  int bits = 4;
  std::string granularity = "per-channel";
  bool per_channel = false;
  bool per_layer = false;
  std::string method = "gradient-descent";
  int k = 1;
  std::string correction = "none";
  std::string distribution = "gaussian";
  std::uint64_t seed = 0;

  void attach(CLI::App* app, bool with_k = true) {
    app->add_option("--recipe", recipe_file, "Recipe JSON; explicit flags override its fields");
    app->add_option("--scheme", scheme, "uniform | pwlq");
    app->add_option("--bits", bits, "Bit width in [2, 8]");
    app->add_option("--granularity", granularity, "per-layer | per-channel");
    app->add_flag("--per-channel", per_channel, "Shorthand for --granularity per-channel");
    app->add_flag("--per-layer", per_layer, "Shorthand for --granularity per-layer");
    app->add_option("--breakpoint-method", method, "gradient-descent | closed-form | grid");
    if (with_k) app->add_option("--k", k, "Number of breakpoints in [1, 3]");
    app->add_option("--bias-correction", correction, "none | mean | mean-var (bare flag: mean-var)")
        ->expected(0, 1)
        ->default_str("mean-var");
    app->add_option("--distribution", distribution, "gaussian | laplacian");
    app->add_option("--seed", seed, "Seed for every random draw");
  }

  qkit::Recipe build(const CLI::App* app) const {
    qkit::Recipe r;
    if (!recipe_file.empty()) {
      std::ifstream in(recipe_file);
      if (!in) throw qkit::error("cannot open recipe " + recipe_file);
      json j;
      try {
        in >> j;
      } catch (const json::exception& e) {
        throw qkit::invalid_argument(std::string("malformed recipe JSON: ") + e.what());
      }
      r = qkit::recipe_from_json(j.contains("recipe") ? j["recipe"] : j);
    }
    auto given = [&](const char* name) { return app->count(name) > 0; };
    if (recipe_file.empty() || given("--scheme")) r.scheme = qkit::parse_scheme(scheme);
    if (recipe_file.empty() || given("--bits")) r.bits = bits;
    if (recipe_file.empty() || given("--granularity")) r.granularity = qkit::parse_granularity(granularity);
    if (per_channel && per_layer) throw qkit::invalid_argument("--per-channel and --per-layer are exclusive");
    if (per_channel) r.granularity = qkit::Granularity::PerChannel;
    if (per_layer) r.granularity = qkit::Granularity::PerLayer;
    if (recipe_file.empty() || given("--breakpoint-method"))
      r.breakpoint_method = qkit::parse_breakpoint_method(method);
    if (recipe_file.empty() || given("--k")) r.breakpoints = k;
    if (recipe_file.empty() || given("--bias-correction")) {
      // a bare --bias-correction leaves the option string empty
      r.bias_correction = qkit::parse_correction_mode(correction.empty() ? "mean-var" : correction);
    }
    if (recipe_file.empty() || given("--distribution")) r.distribution = qkit::parse_distribution(distribution);
    if (recipe_file.empty() || given("--seed")) r.seed = seed;
    r.validate();
    return r;
  }
};

// ---------------------------------------------------------------------------

int cmd_quantize(const std::string& input, const qkit::Recipe& recipe, const std::string& out_dir, bool verbose) {
  const auto t = qkit::load_tensor(input);
  const auto result = qkit::quantize_with_recipe(t, recipe);

  if (verbose) {
    qkit::validate(result.tensor);
    for (const auto& c : result.channels) {
      if (c.solution && c.solution->method == qkit::BreakpointMethod::GradientDescent && recipe.breakpoints == 1 &&
          c.distribution_scale && !c.solution->at_bound &&
          !(std::abs(c.solution->residual) <= qkit::kStationarityTolerance * std::max(1.0, c.bound)))
        throw check_failure("channel " + std::to_string(c.index) + " breakpoint is not stationary");
    }
  }

  json channels = json::array();
  double total = 0.0;
  std::size_t count = 0;
  const auto views = qkit::detail::parameter_views(t, recipe.granularity);
  for (const auto& c : result.channels) {
    json j = {{"index", c.index}, {"bound", c.bound}, {"mse", c.mse}};
    if (c.distribution_scale) j["distribution_scale"] = *c.distribution_scale;
    if (c.solution) j["solution"] = solution_json(*c.solution);
    if (c.correction) j["correction"] = correction_json(*c.correction);
    channels.push_back(std::move(j));
    total += c.mse * static_cast<double>(views[c.index].size());
    count += views[c.index].size();
  }
  const json sidecar = {{"version", qkit::kRecipeVersion},
                        {"recipe", qkit::to_json(recipe)},
                        {"input", fs::path(input).filename().string()},
                        {"shape", t.shape()},
                        {"channel_axis", t.channel_axis()},
                        {"mse", total / static_cast<double>(count)},
                        {"channels", channels}};

  qkit::save_quantized(result.tensor, output_path(out_dir, input, ".qtnq"));
  write_json(output_path(out_dir, input, ".recipe.json"), sidecar);
  return 0;
}

int cmd_analyze(const std::string& original_path, const std::string& quantized_path, const std::string& out_dir,
                const std::string& distribution, std::vector<int> sweep_bits, int points) {
  const auto original = qkit::load_tensor(original_path);
  const auto q = qkit::load_quantized(quantized_path);
  if (q.shape != original.shape()) throw qkit::invalid_argument("original and quantized shapes differ");
  const auto kind = qkit::parse_distribution(distribution);
  const auto deq = qkit::dequantize(q);
  const auto views = qkit::detail::parameter_views(original, q.granularity);
  const auto dviews = qkit::detail::parameter_views(deq, q.granularity);
  const int bits = std::visit([](const auto& ps) { return ps.front().bits; }, q.params);

  json channels = json::array();
  for (std::size_t c = 0; c < views.size(); ++c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < views[c].size(); ++i) {
      const double e = static_cast<double>(dviews[c][i]) - views[c][i];
      acc += e * e;
    }
    const double mse = acc / static_cast<double>(views[c].size());
    const double m = q.scheme() == qkit::Scheme::Pwlq ? q.pwlq_params()[c].bound : qkit::stats(views[c]).absmax;
    json j = {{"index", c}, {"scheme", qkit::to_string(q.scheme())}, {"bits", bits}, {"empirical_mse", mse}};
    if (bits >= 2 && m > 0.0) {
      try {
        const auto model = qkit::fit_distribution(views[c], kind).with_bound(m);
        double p;
        if (q.scheme() == qkit::Scheme::Pwlq && q.pwlq_params()[c].breakpoints.size() == 1)
          p = q.pwlq_params()[c].breakpoints.front();
        else
          p = qkit::solve_breakpoint(model, bits, m).breakpoint();
        auto rep = qkit::analytic_report(model, bits, m, p);
        rep.empirical_mse = mse;
        rep.uniform_empirical_mse = qkit::empirical_mse(views[c], qkit::symmetric_params(bits, m));
        j["report"] = report_json(rep);
      } catch (const qkit::data_error&) {
        j["report"] = nullptr;  // no spread to fit
      }
    }
    channels.push_back(std::move(j));
  }

  if (sweep_bits.empty()) sweep_bits = {bits};
  std::string csv = "bits,breakpoint,breakpoint_over_m,pwlq_mse,uniform_mse\n";
  const double m = qkit::stats(original).absmax;
  json sweeps = json::array();
  if (m > 0.0) {
    for (int b : sweep_bits) {
      if (b < 2 || b > 8) throw qkit::invalid_argument("sweep bit widths must lie in [2, 8]");
      const auto pts = qkit::breakpoint_sweep(original.data(), b, points);
      std::vector<double> ys;
      auto best = pts.front();
      for (const auto& pt : pts) {
        csv += std::to_string(b) + "," + format_double(pt.breakpoint) + "," + format_double(pt.breakpoint / m) + "," +
               format_double(pt.pwlq_mse) + "," + format_double(pt.uniform_mse) + "\n";
        ys.push_back(pt.pwlq_mse);
        if (pt.pwlq_mse < best.pwlq_mse) best = pt;
      }
      sweeps.push_back({{"bits", b},
                        {"points", points},
                        {"best_breakpoint", best.breakpoint},
                        {"best_pwlq_mse", best.pwlq_mse},
                        {"uniform_mse", best.uniform_mse},
                        {"unimodal", qkit::is_unimodal(ys)}});
    }
  }

  const json report = {{"version", qkit::kRecipeVersion},
                       {"original", fs::path(original_path).filename().string()},
                       {"quantized", fs::path(quantized_path).filename().string()},
                       {"granularity", qkit::to_string(q.granularity)},
                       {"mse", qkit::mse_between(original, deq)},
                       {"channels", channels},
                       {"sweeps", sweeps}};
  write_json(output_path(out_dir, quantized_path, ".report.json"), report);
  qkit::detail::write_file_atomic(output_path(out_dir, quantized_path, ".sweep.csv"), csv);
  return 0;
}

int cmd_sweep(const std::string& input, const qkit::Recipe& recipe, const std::vector<double>& percents, int trials,
              const std::string& out_dir) {
  if (percents.empty()) throw qkit::invalid_argument("perturbation level list is empty");
  const auto levels = parse_levels(percents);
  const auto t = qkit::load_tensor(input);
  const auto study = qkit::perturbation_study(t, recipe, levels, trials, recipe.seed);
  json lv = json::array();
  for (const auto& l : study.levels)
    lv.push_back({{"level", l.fraction}, {"median", l.median}, {"q25", l.q25}, {"q75", l.q75}, {"mse", l.mse}});
  const json out = {{"version", qkit::kRecipeVersion},
                    {"recipe", qkit::to_json(recipe)},
                    {"input", fs::path(input).filename().string()},
                    {"trials", trials},
                    {"optimum", solution_json(study.optimum)},
                    {"optimum_mse", study.optimum_mse},
                    {"levels", lv}};
  write_json(output_path(out_dir, input, ".perturbation.json"), out);
  return 0;
}

int cmd_calibrate(const std::string& input_dir, std::size_t k, bool per_sample, const std::string& out_dir) {
  if (!fs::is_directory(input_dir)) throw qkit::invalid_argument("not a directory: " + input_dir);
  // layer name = file name up to the first '.', e.g. conv1.batch0.qtns -> conv1
  std::map<std::string, std::vector<fs::path>> layers;
  for (const auto& entry : fs::directory_iterator(input_dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".qtns") continue;
    const auto name = entry.path().filename().string();
    layers[name.substr(0, name.find('.'))].push_back(entry.path());
  }
  if (layers.empty()) throw qkit::invalid_argument("no .qtns files in " + input_dir);
  json out = {{"version", qkit::kRecipeVersion},
              {"pooling", per_sample ? "per-sample" : "pooled"},
              {"layers", json::object()}};
  for (auto& [name, files] : layers) {
    std::sort(files.begin(), files.end());
    std::vector<qkit::Tensor> samples;
    for (const auto& f : files) samples.push_back(qkit::load_tensor(f));
    const auto r = qkit::calibrate(samples, k,
                                   per_sample ? qkit::CalibrationPooling::PerSample : qkit::CalibrationPooling::Pooled);
    if (r.degraded)
      std::cerr << json{{"warning", "fewer values than k; using global extremes"}, {"layer", name}}.dump() << "\n";
    out["layers"][name] = {{"min", r.min},         {"max", r.max},       {"k", r.k},
                           {"samples", r.samples}, {"values", r.values}, {"degraded", r.degraded}};
  }
  fs::create_directories(out_dir);
  write_json(fs::path(out_dir) / "ranges.json", out);
  return 0;
}

int cmd_simulate(const std::string& weights_path, const std::string& acts_path, const std::string& out_dir,
                 int accumulator_bits, bool verbose) {
  const auto w = qkit::load_quantized(weights_path);
  const auto x = qkit::load_quantized(acts_path);
  if (x.scheme() != qkit::Scheme::Uniform || x.granularity != qkit::Granularity::PerLayer)
    throw qkit::invalid_argument("activations must be uniformly quantized per layer");
  const auto& xp = x.uniform_params().front();

  // weight rows are slices along the channel axis
  qkit::validate(w);
  const qkit::Tensor layout(w.shape, std::vector<float>(w.codes.size()), w.channel_axis);
  const auto rows = qkit::channel_views(layout, w.channel_axis);
  const std::size_t length = rows.front().size();
  if (x.codes.size() % length != 0)
    throw qkit::invalid_argument("activation size is not a multiple of the weight row length");
  const std::size_t batches = x.codes.size() / length;

  json outputs = json::array();
  double max_rel = 0.0;
  std::optional<qkit::DatapathTrace> total;
  for (std::size_t b = 0; b < batches; ++b) {
    const std::span<const std::int32_t> xq(x.codes.data() + b * length, length);
    json row = json::array();
    for (std::size_t c = 0; c < rows.size(); ++c) {
      std::vector<std::int32_t> wq(length);
      std::vector<std::uint8_t> reg(w.scheme() == qkit::Scheme::Pwlq ? length : 0);
      for (std::size_t i = 0; i < length; ++i) {
        wq[i] = w.codes[rows[c].flat_index(i)];
        if (!reg.empty()) reg[i] = w.regions[rows[c].flat_index(i)];
      }
      const std::size_t pi = w.granularity == qkit::Granularity::PerLayer ? 0 : c;
      qkit::DatapathResult res;
      if (w.scheme() == qkit::Scheme::Uniform) {
        const auto k = qkit::make_uniform_constants(xp, w.uniform_params()[pi], wq);
        res = qkit::inner_product_uniform(xq, wq, k, accumulator_bits);
      } else {
        const auto k = qkit::make_pwlq_constants(xp, w.pwlq_params()[pi], wq, reg);
        res = qkit::inner_product_pwlq(xq, wq, reg, k, accumulator_bits);
      }
      long double ref = 0.0L;
      for (std::size_t i = 0; i < length; ++i) {
        const double wv = w.scheme() == qkit::Scheme::Uniform
                              ? qkit::dequantize_value(wq[i], w.uniform_params()[pi])
                              : qkit::dequantize_pwlq_value(wq[i], reg[i], w.pwlq_params()[pi]);
        ref += static_cast<long double>(qkit::dequantize_value(xq[i], xp)) * wv;
      }
      if (ref != 0.0L)
        max_rel = std::max(max_rel, static_cast<double>(std::abs((res.value - ref) / ref)));
      row.push_back(res.value);
      if (!total) {
        total = res.trace;
      } else {
        for (std::size_t r = 0; r < total->macs.size(); ++r) {
          total->macs[r] += res.trace.macs[r];
          total->products[r] += res.trace.products[r];
          total->activation_sums[r] += res.trace.activation_sums[r];
        }
        total->activation_additions += res.trace.activation_additions;
        total->fp_operations += res.trace.fp_operations;
        total->length += res.trace.length;
      }
    }
    outputs.push_back(std::move(row));
  }
  constexpr double kSimulationTolerance = 1e-9;
  if (verbose && max_rel > kSimulationTolerance)
    throw check_failure("integer path deviates from the float reference by " + format_double(max_rel));

  json out = {{"version", qkit::kRecipeVersion},
              {"scheme", qkit::to_string(w.scheme())},
              {"batches", batches},
              {"channels", rows.size()},
              {"length", length},
              {"accumulator_bits", accumulator_bits},
              {"outputs", outputs},
              {"max_relative_error", max_rel},
              {"trace", trace_json(*total)}};
  if (w.scheme() == qkit::Scheme::Pwlq) {
    const auto rep = qkit::overhead_report(qkit::uniform_reference_trace(total->length), *total);
    out["overhead"] = {{"uniform_macs", rep.uniform_macs},
                       {"pwlq_macs", rep.pwlq_macs},
                       {"mac_counts_equal", rep.mac_counts_equal},
                       {"extra_accumulators", rep.extra_accumulators},
                       {"extra_storage_bits_per_weight", rep.extra_storage_bits_per_weight},
                       {"uniform_fp_constants", rep.uniform_fp_constants},
                       {"pwlq_fp_constants", rep.pwlq_fp_constants},
                       {"extra_integer_additions", rep.extra_integer_additions},
                       {"tail_occupancy", rep.tail_occupancy}};
  }
  write_json(output_path(out_dir, weights_path, ".trace.json"), out);
  return 0;
}

int report_error(const char* kind, const std::string& message, int code) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qkit: post-training piecewise linear quantization toolkit"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("--verbose", verbose, "Run internal oracle checks and fail on any mismatch");
  std::string out_dir = ".";

  auto* quantize = app.add_subcommand("quantize", "Quantize a QTNS tensor into a QTNQ file plus recipe sidecar");
  std::string q_input;
  RecipeFlags q_flags;
  quantize->add_option("--input", q_input, "Input QTNS tensor")->required();
  quantize->add_option("--out-dir", out_dir, "Output directory");
  q_flags.attach(quantize);

  auto* analyze = app.add_subcommand("analyze", "Error report and MSE-vs-breakpoint sweep");
  std::string a_original, a_quantized, a_distribution = "gaussian";
  std::vector<int> a_bits;
  int a_points = 100;
  analyze->add_option("--original", a_original, "Original QTNS tensor")->required();
  analyze->add_option("--quantized", a_quantized, "Quantized QTNQ tensor")->required();
  analyze->add_option("--out-dir", out_dir, "Output directory");
  analyze->add_option("--distribution", a_distribution, "gaussian | laplacian");
  analyze->add_option("--sweep-bits", a_bits, "Bit widths for the CSV sweep (default: the file's)")->delimiter(',');
  analyze->add_option("--points", a_points, "Breakpoints per sweep");

  auto* sweep = app.add_subcommand("sweep", "Breakpoint perturbation study");
  std::string s_input;
  RecipeFlags s_flags;
  std::vector<double> s_levels;
  int s_trials = 100;
  sweep->add_option("--input", s_input, "Input QTNS tensor")->required();
  sweep->add_option("--out-dir", out_dir, "Output directory");
  sweep->add_option("--levels", s_levels, "Perturbation levels in percent, e.g. 5,10,20,30")
      ->delimiter(',')
      ->required();
  sweep->add_option("--trials", s_trials, "Seeded trials per level");
  s_flags.attach(sweep);

  auto* calibrate = app.add_subcommand("calibrate", "Activation ranges from a directory of QTNS samples");
  std::string c_dir;
  std::size_t c_k = qkit::kDefaultCalibrationK;
  bool c_per_sample = false;
  calibrate->add_option("--input-dir", c_dir, "Directory of <layer>.<batch>.qtns files")->required();
  calibrate->add_option("--k", c_k, "Extremes per side entering the median");
  calibrate->add_flag("--per-sample", c_per_sample, "Use per-sample extrema instead of pooled values");
  calibrate->add_option("--out-dir", out_dir, "Output directory");

  auto* simulate = app.add_subcommand("simulate", "Integer inner-product datapath simulation");
  std::string m_weights, m_acts;
  int m_bits = qkit::kDefaultAccumulatorBits;
  simulate->add_option("--weights", m_weights, "Quantized weights (QTNQ)")->required();
  simulate->add_option("--activations", m_acts, "Quantized activations (QTNQ, uniform per-layer)")->required();
  simulate->add_option("--accumulator-bits", m_bits, "Accumulator width in bits");
  simulate->add_option("--out-dir", out_dir, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage_error", e.what(), 2);
  }

  try {
    if (*quantize) return cmd_quantize(q_input, q_flags.build(quantize), out_dir, verbose);
    if (*analyze) return cmd_analyze(a_original, a_quantized, out_dir, a_distribution, a_bits, a_points);
    if (*sweep) return cmd_sweep(s_input, s_flags.build(sweep), s_levels, s_trials, out_dir);
    if (*calibrate) return cmd_calibrate(c_dir, c_k, c_per_sample, out_dir);
    if (*simulate) return cmd_simulate(m_weights, m_acts, out_dir, m_bits, verbose);
  } catch (const qkit::invalid_argument& e) {
    return report_error(e.kind(), e.what(), 2);
  } catch (const qkit::format_error& e) {
    return report_error(e.kind(), e.what(), 2);
  } catch (const qkit::error& e) {
    return report_error(e.kind(), e.what(), 1);
  } catch (const std::exception& e) {
    return report_error("internal_error", e.what(), 1);
  }
  return 0;
}
