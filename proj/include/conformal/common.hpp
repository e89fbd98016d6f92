#pragma once

// Shared basics: error types, float->integer snapping, a minimal row-major
// matrix. Everything else in the library builds on these.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace conformal {

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Base class for all library errors.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid argument or precondition violation detected at an API boundary.
struct argument_error : error {
  using error::error;
};

/// What went wrong while reading an input file.
enum class parse_issue {
  io,            ///< file missing/unreadable/empty
  bad_cell,      ///< a field failed to parse as the expected type
  shape,         ///< row/column count disagrees with the header or companion file
  label_range,   ///< label outside [0, n_classes)
  row_sum,       ///< probability row too far from summing to 1
  schema,        ///< structured input (JSON) missing or mistyping a field
};

/// File-parsing failure carrying a 1-based line and column when known (0 =
/// not applicable).
struct parse_error : error {
  parse_error(parse_issue issue_, std::string msg, std::size_t line_ = 0,
              std::size_t column_ = 0)
      : error(std::move(msg)), issue(issue_), line(line_), column(column_) {}
  parse_issue issue;
  std::size_t line;
  std::size_t column;
};

namespace detail {

/// Relative tolerance used to recognise "this double was meant to be an
/// integer" before rounding directions are applied.
inline constexpr double kSnapRelTol = 32.0 * std::numeric_limits<double>::epsilon();

inline bool nearly_integer(double x, double& snapped) {
  const double r = std::nearbyint(x);
  if (std::abs(x - r) <= kSnapRelTol * std::max(1.0, std::abs(x))) {
    snapped = r;
    return true;
  }
  return false;
}

}  // namespace detail

/// ceil(x) that first snaps x to the nearest integer when it is within a few
/// ulps of one. Products such as (n+1)*(1-alpha) routinely land a hair above
/// an exact integer in binary floating point; a raw ceil would then
/// overshoot the value the real-arithmetic formula defines.
inline long long ceil_snapped(double x) {
  double r;
  if (detail::nearly_integer(x, r)) return static_cast<long long>(r);
  return static_cast<long long>(std::ceil(x));
}

/// floor(x) with the same snapping rule as ceil_snapped.
inline long long floor_snapped(double x) {
  double r;
  if (detail::nearly_integer(x, r)) return static_cast<long long>(r);
  return static_cast<long long>(std::floor(x));
}

/// Dense row-major matrix of doubles. Rows are exposed as spans; the layout
/// is guaranteed so scoring loops can stream over contiguous rows.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  ///< rows*cols values, row-major

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<const double> row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }
  std::span<double> row(std::size_t r) {
    return {data.data() + r * cols, cols};
  }

  bool empty() const { return rows == 0; }
};

namespace detail {

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw argument_error(msg);
}

inline void require_alpha(double alpha) {
  require(alpha > 0.0 && alpha < 1.0, "alpha must lie strictly between 0 and 1");
}

}  // namespace detail

}  // namespace conformal
