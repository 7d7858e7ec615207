#pragma once

#include <qkit/detail/binary_io.hpp>
#include <qkit/error.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace qkit {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense row-major float tensor. `channel_axis` names the output-channel axis.
class Tensor {
public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<float> data, std::size_t channel_axis = 0)
      : shape_(std::move(shape)), data_(std::move(data)), channel_axis_(channel_axis) {
    detail::require(!shape_.empty(), "tensor rank must be at least 1");
    for (auto e : shape_) detail::require(e > 0, "tensor extents must be positive");
    detail::require(element_count(shape_) == data_.size(), "tensor shape does not match element count");
    detail::require(channel_axis_ < shape_.size(), "channel axis out of range");
  }

  /// Rank-1 convenience constructor.
  explicit Tensor(std::vector<float> data) : shape_{data.size()}, data_(std::move(data)) {
    detail::require(!data_.empty(), "tensor extents must be positive");
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::size_t channel_axis() const { return channel_axis_; }

  std::span<const float> data() const { return data_; }
  float operator[](std::size_t i) const { return data_[i]; }

  friend bool operator==(const Tensor&, const Tensor&) = default;

private:
  Shape shape_;
  std::vector<float> data_;
  std::size_t channel_axis_ = 0;
};

/// Strided window onto one slice of a tensor along an axis.
class ChannelView {
public:
  ChannelView(std::span<const float> data, std::size_t outer, std::size_t extent, std::size_t inner,
              std::size_t index)
      : data_(data), outer_(outer), extent_(extent), inner_(inner), index_(index) {}

  std::size_t size() const { return outer_ * inner_; }

  /// Offset of the k-th view element inside the parent tensor.
  std::size_t flat_index(std::size_t k) const {
    const std::size_t o = k / inner_;
    const std::size_t i = k % inner_;
    return (o * extent_ + index_) * inner_ + i;
  }

  float operator[](std::size_t k) const { return data_[flat_index(k)]; }

  std::vector<float> values() const {
    std::vector<float> out(size());
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = (*this)[k];
    return out;
  }

  Tensor to_tensor() const { return Tensor(values()); }

private:
  std::span<const float> data_;
  std::size_t outer_, extent_, inner_, index_;
};

/// Splits `t` into shape[axis] disjoint views; the views together cover t.
inline std::vector<ChannelView> channel_views(const Tensor& t, std::size_t axis) {
  if (axis >= t.rank()) throw invalid_argument("channel axis " + std::to_string(axis) + " out of range");
  const auto& s = t.shape();
  const std::size_t outer = element_count(Shape(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(axis)));
  const std::size_t inner = element_count(Shape(s.begin() + static_cast<std::ptrdiff_t>(axis) + 1, s.end()));
  std::vector<ChannelView> views;
  views.reserve(s[axis]);
  for (std::size_t c = 0; c < s[axis]; ++c) views.emplace_back(t.data(), outer, s[axis], inner, c);
  return views;
}

inline std::vector<ChannelView> channel_views(const Tensor& t) { return channel_views(t, t.channel_axis()); }

/// The whole tensor as a single view.
inline ChannelView whole_view(const Tensor& t) { return ChannelView(t.data(), 1, 1, t.size(), 0); }

struct TensorStats {
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
  double stddev = 0.0;  ///< population convention
  double absmax = 0.0;
  std::size_t count = 0;
};

template <class Range>
TensorStats stats_of(const Range& values) {
  TensorStats st;
  st.count = std::size(values);
  if (st.count == 0) throw invalid_argument("stats of an empty tensor");
  st.min = st.max = static_cast<double>(values[0]);
  double sum = 0.0;
  for (std::size_t i = 0; i < st.count; ++i) {
    const double v = values[i];
    st.min = std::min(st.min, v);
    st.max = std::max(st.max, v);
    sum += v;
  }
  st.mean = sum / static_cast<double>(st.count);
  double ss = 0.0;
  for (std::size_t i = 0; i < st.count; ++i) {
    const double d = static_cast<double>(values[i]) - st.mean;
    ss += d * d;
  }
  st.stddev = std::sqrt(ss / static_cast<double>(st.count));
  // rounding in the mean can push it a hair outside [min, max] for constant data
  st.mean = std::clamp(st.mean, st.min, st.max);
  st.absmax = std::max(std::abs(st.min), std::abs(st.max));
  return st;
}

inline TensorStats stats(const Tensor& t) { return stats_of(t.data()); }
inline TensorStats stats(const ChannelView& v) { return stats_of(v); }

// ---------------------------------------------------------------------------
// QTNS v1: "QTNS" | u32 version | u32 dtype | u32 rank | rank x u64 extent |
//          u32 channel axis | payload (f32, little-endian)
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kQtnsVersion = 1;
inline constexpr std::uint32_t kDtypeF32 = 0;
inline constexpr std::uint32_t kDtypeCodes8 = 1;

namespace detail {

inline void write_tensor_header(ByteWriter& w, std::string_view magic, std::uint32_t dtype, const Shape& shape,
                                std::size_t channel_axis) {
  w.tag(magic);
  w.put<std::uint32_t>(kQtnsVersion);
  w.put<std::uint32_t>(dtype);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(shape.size()));
  for (auto e : shape) w.put<std::uint64_t>(e);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(channel_axis));
}

struct TensorHeader {
  Shape shape;
  std::size_t channel_axis = 0;
};

inline TensorHeader read_tensor_header(ByteReader& r, std::string_view magic, std::uint32_t dtype) {
  if (r.tag(magic.size()) != magic) throw format_error("bad magic, expected " + std::string(magic));
  if (auto v = r.get<std::uint32_t>(); v != kQtnsVersion) throw format_error("unsupported version " + std::to_string(v));
  if (auto d = r.get<std::uint32_t>(); d != dtype) throw format_error("unsupported dtype " + std::to_string(d));
  const auto rank = r.get<std::uint32_t>();
  if (rank == 0 || rank > 16) throw format_error("bad rank " + std::to_string(rank));
  TensorHeader h;
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const auto e = r.get<std::uint64_t>();
    if (e == 0) throw format_error("zero extent");
    if (count > (std::size_t{1} << 40) / e) throw format_error("tensor too large");
    count *= e;
    h.shape.push_back(e);
  }
  h.channel_axis = r.get<std::uint32_t>();
  if (h.channel_axis >= rank) throw format_error("channel axis out of range");
  return h;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  detail::ByteWriter w;
  detail::write_tensor_header(w, "QTNS", kDtypeF32, t.shape(), t.channel_axis());
  for (float v : t.data()) w.put<float>(v);
  return w.buffer();
}

inline Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  auto h = detail::read_tensor_header(r, "QTNS", kDtypeF32);
  const std::size_t n = element_count(h.shape);
  if (r.remaining() != n * sizeof(float))
    throw format_error("payload holds " + std::to_string(r.remaining()) + " bytes, expected " +
                       std::to_string(n * sizeof(float)));
  std::vector<float> data(n);
  for (auto& v : data) {
    v = r.get<float>();
    if (!std::isfinite(v)) throw data_error("non-finite value in tensor payload");
  }
  return Tensor(std::move(h.shape), std::move(data), h.channel_axis);
}

inline void save_tensor(const Tensor& t, const std::filesystem::path& path) {
  detail::write_file_atomic(path, encode_tensor(t));
}

inline Tensor load_tensor(const std::filesystem::path& path) { return decode_tensor(detail::read_file(path)); }

}  // namespace qkit
