#pragma once

#include <qkit/detail/binary_io.hpp>
#include <qkit/quantized_tensor.hpp>
#include <qkit/tensor.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

// QTNQ v1 (little-endian):
//   "QTNQ" | u32 version=1 | u32 dtype=1 | u32 rank | rank x u64 extent | u32 channel axis
//   u32 scheme (0 uniform, 1 pwlq) | u32 granularity (0 per-layer, 1 per-channel) | u32 param count
//   param count x params block
//     uniform: u32 b | f64 r_l | f64 r_u | f64 s | f64 z | u32 signedness (0 signed, 1 unsigned)
//     pwlq:    u32 b | f64 m | u32 K | K x f64 breakpoint | f64 shift | (K+1) x (f64 s, f64 z)
//   count x u8 codes (two's complement byte for signed domains, plain byte for unsigned)
//   pwlq only: region bitmap, ceil(log2(K+1)) bits per element, LSB first, zero-padded to a byte

namespace qkit {

namespace detail {

inline void write_params(ByteWriter& w, const QuantParams& p) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.bits));
  w.put<double>(p.range_low);
  w.put<double>(p.range_high);
  w.put<double>(p.scale);
  w.put<double>(p.offset);
  w.put<std::uint32_t>(p.signedness == Signedness::SymmetricSigned ? 0 : 1);
}

inline void write_params(ByteWriter& w, const PwlqParams& p) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.bits));
  w.put<double>(p.bound);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.breakpoints.size()));
  for (double t : p.breakpoints) w.put<double>(t);
  w.put<double>(p.shift);
  for (const auto& r : p.regions) {
    w.put<double>(r.scale);
    w.put<double>(r.offset);
  }
}

inline QuantParams read_uniform_params(ByteReader& r) {
  QuantParams p;
  p.bits = static_cast<int>(r.get<std::uint32_t>());
  if (p.bits < 1 || p.bits > 8) throw format_error("stored bit width outside [1, 8]");
  p.range_low = r.get<double>();
  p.range_high = r.get<double>();
  p.scale = r.get<double>();
  p.offset = r.get<double>();
  const auto s = r.get<std::uint32_t>();
  if (s > 1) throw format_error("bad signedness code");
  p.signedness = s == 0 ? Signedness::SymmetricSigned : Signedness::AsymmetricUnsigned;
  if (!std::isfinite(p.scale) || !std::isfinite(p.offset) || !(p.range_low <= p.range_high))
    throw data_error("invalid uniform parameters");
  return p;
}

inline PwlqParams read_pwlq_params(ByteReader& r) {
  const auto bits = static_cast<int>(r.get<std::uint32_t>());
  if (bits < 2 || bits > 8) throw format_error("stored PWLQ bit width outside [2, 8]");
  const double m = r.get<double>();
  const auto k = r.get<std::uint32_t>();
  if (k < 1 || k > 255) throw format_error("bad breakpoint count");
  std::vector<double> t(k);
  for (auto& x : t) x = r.get<double>();
  PwlqParams p;
  try {
    p = make_pwlq_params(bits, m, std::move(t));
  } catch (const invalid_argument& e) {
    throw data_error(std::string("invalid PWLQ parameters: ") + e.what());
  }
  p.shift = r.get<double>();
  for (auto& reg : p.regions) {
    reg.scale = r.get<double>();
    reg.offset = r.get<double>();
    if (!std::isfinite(reg.scale) || !std::isfinite(reg.offset)) throw data_error("invalid region parameters");
  }
  return p;
}

inline int stored_region_bits(const QuantizedTensor& q) {
  if (q.scheme() != Scheme::Pwlq) return 0;
  int bits = 0;
  for (const auto& p : q.pwlq_params()) bits = std::max(bits, p.region_bits());
  return bits;
}

}  // namespace detail

/// Packs `bits`-wide values LSB first into bytes.
inline std::vector<std::uint8_t> pack_bits(std::span<const std::uint8_t> values, int bits) {
  std::vector<std::uint8_t> out((values.size() * static_cast<std::size_t>(bits) + 7) / 8, 0);
  std::size_t pos = 0;
  for (auto v : values)
    for (int b = 0; b < bits; ++b, ++pos)
      if ((v >> b) & 1u) out[pos / 8] |= static_cast<std::uint8_t>(1u << (pos % 8));
  return out;
}

inline std::vector<std::uint8_t> unpack_bits(std::span<const std::uint8_t> packed, int bits, std::size_t count) {
  std::vector<std::uint8_t> out(count, 0);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < count; ++i)
    for (int b = 0; b < bits; ++b, ++pos)
      if ((packed[pos / 8] >> (pos % 8)) & 1u) out[i] |= static_cast<std::uint8_t>(1u << b);
  return out;
}

inline std::vector<std::uint8_t> encode_quantized(const QuantizedTensor& q) {
  validate(q);
  detail::ByteWriter w;
  detail::write_tensor_header(w, "QTNQ", kDtypeCodes8, q.shape, q.channel_axis);
  w.put<std::uint32_t>(q.scheme() == Scheme::Uniform ? 0 : 1);
  w.put<std::uint32_t>(q.granularity == Granularity::PerLayer ? 0 : 1);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(q.param_count()));
  std::visit(
      [&](const auto& ps) {
        for (const auto& p : ps) {
          detail::require(p.bits <= 8, "QTNQ stores at most 8-bit codes");
          detail::write_params(w, p);
        }
      },
      q.params);
  for (auto c : q.codes) w.put<std::uint8_t>(static_cast<std::uint8_t>(c & 0xff));
  if (q.scheme() == Scheme::Pwlq) w.bytes(pack_bits(q.regions, detail::stored_region_bits(q)));
  return w.buffer();
}

inline QuantizedTensor decode_quantized(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  auto h = detail::read_tensor_header(r, "QTNQ", kDtypeCodes8);
  QuantizedTensor q;
  q.shape = std::move(h.shape);
  q.channel_axis = h.channel_axis;
  const auto scheme = r.get<std::uint32_t>();
  const auto gran = r.get<std::uint32_t>();
  if (scheme > 1 || gran > 1) throw format_error("bad scheme or granularity code");
  q.granularity = gran == 0 ? Granularity::PerLayer : Granularity::PerChannel;
  const auto count = r.get<std::uint32_t>();
  const std::size_t want = q.granularity == Granularity::PerLayer ? 1 : q.shape[q.channel_axis];
  if (count != want) throw format_error("parameter count does not match granularity");

  const std::size_t n = element_count(q.shape);
  if (scheme == 0) {
    std::vector<QuantParams> ps(count);
    for (auto& p : ps) p = detail::read_uniform_params(r);
    const auto raw = r.take(n);
    q.codes.resize(n);
    detail::for_each_slot(q.shape, q.channel_axis, q.granularity, [&](std::size_t c, std::size_t i) {
      q.codes[i] = ps[c].signedness == Signedness::SymmetricSigned ? static_cast<std::int8_t>(raw[i]) : raw[i];
    });
    q.params = std::move(ps);
  } else {
    std::vector<PwlqParams> ps(count);
    for (auto& p : ps) p = detail::read_pwlq_params(r);
    const auto raw = r.take(n);
    q.codes.assign(raw.begin(), raw.end());
    for (auto& c : q.codes) c = static_cast<std::int8_t>(c);
    q.params = std::move(ps);
    const int rb = detail::stored_region_bits(q);
    const std::size_t nbytes = (n * static_cast<std::size_t>(rb) + 7) / 8;
    q.regions = unpack_bits(r.take(nbytes), rb, n);
  }
  if (r.remaining() != 0) throw format_error("trailing bytes after QTNQ payload");
  try {
    validate(q);
  } catch (const invalid_argument& e) {
    throw format_error(e.what());
  }
  return q;
}

inline void save_quantized(const QuantizedTensor& q, const std::filesystem::path& path) {
  detail::write_file_atomic(path, encode_quantized(q));
}

inline QuantizedTensor load_quantized(const std::filesystem::path& path) {
  return decode_quantized(detail::read_file(path));
}

}  // namespace qkit
