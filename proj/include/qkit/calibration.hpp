#pragma once

#include <qkit/error.hpp>
#include <qkit/quantized_tensor.hpp>
#include <qkit/tensor.hpp>
#include <qkit/uniform_quant.hpp>

#include <algorithm>
#include <functional>
#include <queue>
#include <span>
#include <vector>

namespace qkit {

/// Bounded bottom-k / top-k selection. Mergeable: folding partial
/// accumulators in any order yields the same extremes.
class ExtremesAccumulator {
public:
  explicit ExtremesAccumulator(std::size_t k) : k_(k) { detail::require(k >= 1, "k must be at least 1"); }

  void add(double v) {
    ++count_;
    add_low(v);
    add_high(v);
  }

  template <class Range>
  void add_all(const Range& values) {
    for (std::size_t i = 0; i < std::size(values); ++i) add(values[i]);
  }

  void merge(const ExtremesAccumulator& other) {
    detail::require(other.k_ == k_, "cannot merge accumulators with different k");
    for (double v : other.smallest()) add_low(v);
    for (double v : other.largest()) add_high(v);
    count_ += other.count_;
  }

  std::size_t k() const { return k_; }
  std::size_t count() const { return count_; }

  /// Up to k smallest values seen, ascending.
  std::vector<double> smallest() const {
    auto h = low_;
    std::vector<double> out;
    while (!h.empty()) {
      out.push_back(h.top());
      h.pop();
    }
    std::reverse(out.begin(), out.end());
    return out;
  }

  /// Up to k largest values seen, ascending.
  std::vector<double> largest() const {
    auto h = high_;
    std::vector<double> out;
    while (!h.empty()) {
      out.push_back(h.top());
      h.pop();
    }
    return out;
  }

private:
  void add_low(double v) {
    if (low_.size() < k_) {
      low_.push(v);
    } else if (v < low_.top()) {
      low_.pop();
      low_.push(v);
    }
  }
  void add_high(double v) {
    if (high_.size() < k_) {
      high_.push(v);
    } else if (v > high_.top()) {
      high_.pop();
      high_.push(v);
    }
  }

  std::size_t k_;
  std::size_t count_ = 0;
  std::priority_queue<double> low_;                                             // max-heap of the k smallest
  std::priority_queue<double, std::vector<double>, std::greater<double>> high_;  // min-heap of the k largest
};

/// Median of a sorted sequence; even lengths average the two central values.
inline double sorted_median(std::span<const double> sorted) {
  detail::require(!sorted.empty(), "median of an empty set");
  const std::size_t n = sorted.size();
  return n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
}

enum class CalibrationPooling {
  Pooled,     ///< order statistics over all sampled values jointly
  PerSample,  ///< each sample contributes its own min and max
};

struct CalibrationRange {
  double min = 0.0;
  double max = 0.0;
  std::size_t k = 10;
  std::size_t samples = 0;  ///< tensors seen
  std::size_t values = 0;   ///< values entering the order statistics
  bool degraded = false;    ///< fewer than k values: fell back to global extremes
};

inline constexpr std::size_t kDefaultCalibrationK = 10;

/// Clipping range from the medians of the k smallest and k largest values.
inline CalibrationRange calibrate(std::span<const Tensor> samples, std::size_t k = kDefaultCalibrationK,
                                  CalibrationPooling pooling = CalibrationPooling::Pooled) {
  if (samples.empty()) throw invalid_argument("calibration needs at least one sample tensor");
  detail::require(k >= 1, "k must be at least 1");
  ExtremesAccumulator low(k), high(k);
  for (const auto& t : samples) {
    if (pooling == CalibrationPooling::Pooled) {
      low.add_all(t.data());
    } else {
      const auto st = stats(t);
      low.add(st.min);
      high.add(st.max);
    }
  }
  const auto& upper = pooling == CalibrationPooling::Pooled ? low : high;
  CalibrationRange r;
  r.k = k;
  r.samples = samples.size();
  r.values = low.count();
  const auto s = low.smallest();
  const auto l = upper.largest();
  if (low.count() < k) {
    r.degraded = true;
    r.min = s.front();
    r.max = l.back();
  } else {
    r.min = sorted_median(s);
    r.max = sorted_median(l);
  }
  return r;
}

/// Per-layer asymmetric unsigned quantization after clipping to the range.
inline QuantizedTensor quantize_activations(const Tensor& t, const CalibrationRange& range, int bits) {
  if (range.min > range.max) throw invalid_argument("calibration range is inverted");
  return quantize_uniform(t, make_params_or_degenerate(bits, range.min, range.max, Signedness::AsymmetricUnsigned));
}

}  // namespace qkit
