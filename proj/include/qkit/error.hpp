#pragma once

#include <stdexcept>
#include <string>

namespace qkit {

/// Base class for every error raised by the toolkit.
class error : public std::runtime_error {
public:
  explicit error(const std::string& what) : std::runtime_error(what) {}
  virtual const char* kind() const noexcept { return "error"; }
};

/// Malformed file layout (magic, version, dtype, sizes).
class format_error : public error {
public:
  using error::error;
  const char* kind() const noexcept override { return "format_error"; }
};

/// Well-formed file with unusable values (NaN/Inf payload, codes outside the domain).
class data_error : public error {
public:
  using error::error;
  const char* kind() const noexcept override { return "data_error"; }
};

/// Caller supplied parameters that violate a precondition.
class invalid_argument : public error {
public:
  using error::error;
  const char* kind() const noexcept override { return "invalid_argument"; }
};

/// Iterative solver did not reach its tolerance.
class convergence_error : public error {
public:
  using error::error;
  const char* kind() const noexcept override { return "convergence_error"; }
};

/// Fixed-width accumulator left its representable range.
class overflow_error : public error {
public:
  using error::error;
  const char* kind() const noexcept override { return "overflow_error"; }
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw invalid_argument(msg);
}

}  // namespace detail
}  // namespace qkit
