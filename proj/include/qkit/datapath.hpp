#pragma once

#include <qkit/error.hpp>
#include <qkit/pwlq.hpp>
#include <qkit/uniform_quant.hpp>

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

// Functional model of the integer inner-product datapath.
//
// Activations decode as  x = s_x * Xq + z_x.
//
// Uniform weights (w = s_w * Wq):
//   <x, w> = C0 * sum(Xq * Wq) + C1,   C0 = s_x s_w,  C1 = z_x s_w sum(Wq).
//
// PWLQ weights decode per region r as  w = sgn * (s_r * mag + z_r)
// = s_r * Wq + z_r * sgn  with Wq = sgn * mag, so region r contributes
//   P_r = s_x s_r sum_r(Xq Wq) + s_x z_r sum_r(sgn Xq) + z_x (s_r sum_r(Wq) + z_r sum_r(sgn)).
// The first sum is the region's product accumulator, the second its
// activation accumulator (only needed when z_r != 0, i.e. tail regions), the
// bracket is weight-only and folds into a constant. With one breakpoint this
// is C2..C6: C2 = s_x s_w1, C3 = z_x s_w1 sum_R1(Wq), C4 = s_x s_w2,
// C5 = s_x p, C6 = z_x (s_w2 sum_R2(Wq) + p sum_R2(sgn)). The activation
// accumulator is sign-steered because negative tail weights carry offset -p.

namespace qkit {

/// Signed accumulator of a fixed bit width that throws instead of wrapping.
class CheckedAccumulator {
public:
  explicit CheckedAccumulator(int bits = 64) : bits_(bits) {
    detail::require(bits >= 2 && bits <= 64, "accumulator width must lie in [2, 64]");
    max_ = bits == 64 ? std::numeric_limits<std::int64_t>::max() : (std::int64_t{1} << (bits - 1)) - 1;
    min_ = bits == 64 ? std::numeric_limits<std::int64_t>::min() : -(std::int64_t{1} << (bits - 1));
  }

  void add(std::int64_t v) {
    std::int64_t next;
    if (__builtin_add_overflow(value_, v, &next) || next > max_ || next < min_)
      throw overflow_error(std::to_string(bits_) + "-bit accumulator overflow");
    value_ = next;
    ++additions_;
  }

  std::int64_t value() const { return value_; }
  std::uint64_t additions() const { return additions_; }
  int bits() const { return bits_; }

private:
  int bits_;
  std::int64_t min_, max_;
  std::int64_t value_ = 0;
  std::uint64_t additions_ = 0;
};

struct UniformConstants {
  double c0 = 0.0;
  double c1 = 0.0;
  std::int64_t weight_sum = 0;  ///< sum(Wq), kept so C1 can be updated exactly
  double act_offset = 0.0;
  double weight_scale = 0.0;
};

struct RegionConstants {
  double product = 0.0;     ///< s_x s_r
  double activation = 0.0;  ///< s_x z_r (zero: no activation accumulator)
  double constant = 0.0;    ///< z_x (s_r sum_r(Wq) + z_r sum_r(sgn))
  double weight_scale = 0.0;
  double weight_offset = 0.0;
  std::int64_t weight_sum = 0;
  std::int64_t sign_sum = 0;
};

struct PwlqConstants {
  std::vector<RegionConstants> regions;
  double act_offset = 0.0;
  double act_scale = 0.0;

  // one-breakpoint names
  double c2() const { return regions.at(0).product; }
  double c3() const { return regions.at(0).constant; }
  double c4() const { return regions.at(1).product; }
  double c5() const { return regions.at(1).activation; }
  double c6() const { return regions.at(1).constant; }

  friend bool operator==(const PwlqConstants&, const PwlqConstants&) = default;
};

inline bool operator==(const RegionConstants& a, const RegionConstants& b) {
  return a.product == b.product && a.activation == b.activation && a.constant == b.constant &&
         a.weight_scale == b.weight_scale && a.weight_offset == b.weight_offset && a.weight_sum == b.weight_sum &&
         a.sign_sum == b.sign_sum;
}

inline bool operator==(const UniformConstants& a, const UniformConstants& b) {
  return a.c0 == b.c0 && a.c1 == b.c1 && a.weight_sum == b.weight_sum;
}

inline UniformConstants make_uniform_constants(const QuantParams& act, const QuantParams& weight,
                                               std::span<const std::int32_t> wq) {
  if (weight.offset != 0.0) throw invalid_argument("uniform datapath needs zero-offset weights");
  UniformConstants c;
  for (auto w : wq) c.weight_sum += w;
  c.act_offset = act.offset;
  c.weight_scale = weight.scale;
  c.c0 = act.scale * weight.scale;
  c.c1 = act.offset * weight.scale * static_cast<double>(c.weight_sum);
  return c;
}

/// Adjusts C1 after one weight code changes, without rescanning the vector.
inline UniformConstants update_uniform_constants(UniformConstants c, std::int32_t old_code, std::int32_t new_code) {
  c.weight_sum += std::int64_t{new_code} - old_code;
  c.c1 = c.act_offset * c.weight_scale * static_cast<double>(c.weight_sum);
  return c;
}

namespace detail {

inline void refresh(RegionConstants& r, double act_offset) {
  r.constant = act_offset * (r.weight_scale * static_cast<double>(r.weight_sum) +
                             r.weight_offset * static_cast<double>(r.sign_sum));
}

inline std::int64_t pwlq_sign(std::int32_t code) { return pwlq_negative(code) ? -1 : 1; }

}  // namespace detail

inline PwlqConstants make_pwlq_constants(const QuantParams& act, const PwlqParams& weight,
                                         std::span<const std::int32_t> wq, std::span<const std::uint8_t> regions) {
  if (wq.size() != regions.size()) throw invalid_argument("PWLQ weights need one region index per code");
  if (weight.shift != 0.0) throw invalid_argument("datapath cannot fold a channel-level weight shift");
  PwlqConstants c;
  c.act_offset = act.offset;
  c.act_scale = act.scale;
  c.regions.resize(weight.region_count());
  for (std::size_t r = 0; r < c.regions.size(); ++r) {
    c.regions[r].weight_scale = weight.regions[r].scale;
    c.regions[r].weight_offset = weight.regions[r].offset;
  }
  for (std::size_t i = 0; i < wq.size(); ++i) {
    if (regions[i] >= c.regions.size()) throw data_error("region index outside the breakpoint set");
    auto& r = c.regions[regions[i]];
    r.weight_sum += pwlq_signed_magnitude(wq[i]);
    r.sign_sum += detail::pwlq_sign(wq[i]);
  }
  for (auto& r : c.regions) {
    r.product = act.scale * r.weight_scale;
    r.activation = act.scale * r.weight_offset;
    detail::refresh(r, act.offset);
  }
  return c;
}

inline PwlqConstants update_pwlq_constants(PwlqConstants c, std::int32_t old_code, std::uint8_t old_region,
                                           std::int32_t new_code, std::uint8_t new_region) {
  auto& a = c.regions.at(old_region);
  a.weight_sum -= pwlq_signed_magnitude(old_code);
  a.sign_sum -= detail::pwlq_sign(old_code);
  detail::refresh(a, c.act_offset);
  auto& b = c.regions.at(new_region);
  b.weight_sum += pwlq_signed_magnitude(new_code);
  b.sign_sum += detail::pwlq_sign(new_code);
  detail::refresh(b, c.act_offset);
  return c;
}

struct DatapathTrace {
  std::vector<std::uint64_t> macs;              ///< integer MACs per weight region
  std::vector<std::int64_t> products;           ///< product accumulator per region
  std::vector<std::int64_t> activation_sums;    ///< sign-steered activation accumulator per region
  std::vector<bool> has_activation_accumulator;
  std::uint64_t activation_additions = 0;
  std::uint64_t fp_operations = 0;  ///< rescale multiplies + adds after the integer phase
  std::size_t length = 0;
  int region_bits = 0;

  std::uint64_t total_macs() const {
    std::uint64_t n = 0;
    for (auto m : macs) n += m;
    return n;
  }
  std::size_t accumulator_count() const {
    std::size_t n = products.size();
    for (bool b : has_activation_accumulator) n += b ? 1 : 0;
    return n;
  }
  double occupancy(std::size_t region) const {
    return length == 0 ? 0.0 : static_cast<double>(macs.at(region)) / static_cast<double>(length);
  }
};

struct DatapathResult {
  double value = 0.0;
  DatapathTrace trace;
};

inline constexpr int kDefaultAccumulatorBits = 64;

inline DatapathResult inner_product_uniform(std::span<const std::int32_t> xq, std::span<const std::int32_t> wq,
                                            const UniformConstants& c, int accumulator_bits = kDefaultAccumulatorBits) {
  if (xq.size() != wq.size()) throw invalid_argument("inner product of vectors with different lengths");
  CheckedAccumulator acc(accumulator_bits);
  for (std::size_t i = 0; i < xq.size(); ++i) acc.add(std::int64_t{xq[i]} * wq[i]);
  DatapathResult out;
  out.value = c.c0 * static_cast<double>(acc.value()) + c.c1;
  auto& t = out.trace;
  t.length = xq.size();
  t.macs = {acc.additions()};
  t.products = {acc.value()};
  t.activation_sums = {0};
  t.has_activation_accumulator = {false};
  t.fp_operations = 2;
  return out;
}

inline DatapathResult inner_product_pwlq(std::span<const std::int32_t> xq, std::span<const std::int32_t> wq,
                                         std::span<const std::uint8_t> regions, const PwlqConstants& c,
                                         int accumulator_bits = kDefaultAccumulatorBits) {
  if (xq.size() != wq.size()) throw invalid_argument("inner product of vectors with different lengths");
  if (regions.size() != wq.size()) throw invalid_argument("PWLQ inner product is missing region bits");
  const std::size_t nr = c.regions.size();
  std::vector<CheckedAccumulator> prod(nr, CheckedAccumulator(accumulator_bits));
  std::vector<CheckedAccumulator> act(nr, CheckedAccumulator(accumulator_bits));
  std::vector<bool> uses_act(nr);
  for (std::size_t r = 0; r < nr; ++r) uses_act[r] = c.regions[r].activation != 0.0;

  for (std::size_t i = 0; i < xq.size(); ++i) {
    const auto r = regions[i];
    if (r >= nr) throw data_error("region index outside the breakpoint set");
    const std::int64_t w = pwlq_signed_magnitude(wq[i]);
    prod[r].add(xq[i] * w);
    if (uses_act[r]) act[r].add(pwlq_negative(wq[i]) ? -std::int64_t{xq[i]} : std::int64_t{xq[i]});
  }

  DatapathResult out;
  auto& t = out.trace;
  t.length = xq.size();
  t.region_bits = nr <= 1 ? 0 : static_cast<int>(std::bit_width(nr - 1));
  double value = 0.0;
  for (std::size_t r = 0; r < nr; ++r) {
    const auto& rc = c.regions[r];
    value += rc.product * static_cast<double>(prod[r].value()) + rc.constant;
    t.fp_operations += 2;
    if (uses_act[r]) {
      value += rc.activation * static_cast<double>(act[r].value());
      t.fp_operations += 2;
    }
    t.macs.push_back(prod[r].additions());
    t.products.push_back(prod[r].value());
    t.activation_sums.push_back(act[r].value());
    t.has_activation_accumulator.push_back(uses_act[r]);
    t.activation_additions += act[r].additions();
  }
  // the first region's partial sum needs no add into a running total
  t.fp_operations -= 1;
  out.value = value;
  return out;
}

/// Trace a uniform-weight datapath would produce for a length-n workload.
inline DatapathTrace uniform_reference_trace(std::size_t n) {
  DatapathTrace t;
  t.length = n;
  t.macs = {n};
  t.products = {0};
  t.activation_sums = {0};
  t.has_activation_accumulator = {false};
  t.fp_operations = 2;
  return t;
}

struct OverheadReport {
  std::uint64_t uniform_macs = 0;
  std::uint64_t pwlq_macs = 0;
  bool mac_counts_equal = false;
  std::size_t extra_accumulators = 0;
  int extra_storage_bits_per_weight = 0;
  std::size_t uniform_fp_constants = 2;
  std::size_t pwlq_fp_constants = 0;
  std::uint64_t extra_integer_additions = 0;
  std::uint64_t extra_fp_operations = 0;
  double tail_occupancy = 0.0;
};

inline OverheadReport overhead_report(const DatapathTrace& uniform, const DatapathTrace& pwlq) {
  OverheadReport r;
  r.uniform_macs = uniform.total_macs();
  r.pwlq_macs = pwlq.total_macs();
  r.mac_counts_equal = r.uniform_macs == r.pwlq_macs;
  r.extra_accumulators = pwlq.accumulator_count() - uniform.accumulator_count();
  r.extra_storage_bits_per_weight = pwlq.region_bits;
  // product + constant per region, plus an activation coefficient per offset region
  r.pwlq_fp_constants = 2 * pwlq.products.size();
  for (bool b : pwlq.has_activation_accumulator) r.pwlq_fp_constants += b ? 1 : 0;
  r.extra_integer_additions = pwlq.activation_additions;
  r.extra_fp_operations = pwlq.fp_operations - uniform.fp_operations;
  r.tail_occupancy = pwlq.length == 0 ? 0.0 : 1.0 - pwlq.occupancy(0);
  return r;
}

}  // namespace qkit
