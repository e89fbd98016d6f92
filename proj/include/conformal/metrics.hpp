#pragma once

// Evaluation metrics for prediction sets, plus the closed-form law the
// class-conditional coverage of a classwise calibrator follows when scores
// are continuous: Beta(k, n+1-k) with k the calibration rank.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "conformal/common.hpp"
#include "conformal/quantiles.hpp"

namespace conformal {

/// Per-class empirical coverage: entry y is the fraction of evaluation
/// examples with true label y whose set contains y, or NaN when no example
/// of class y was seen (such classes are excluded from the aggregate
/// metrics and counted as missing).
inline std::vector<double> per_class_coverage(
    const std::vector<std::vector<int>>& pred_sets, std::span<const int> labels,
    int n_classes) {
  detail::require(pred_sets.size() == labels.size(),
                  "prediction sets and labels must have equal length");
  detail::require(n_classes >= 1, "n_classes must be >= 1");
  std::vector<long long> seen(static_cast<std::size_t>(n_classes), 0);
  std::vector<long long> hit(static_cast<std::size_t>(n_classes), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    detail::require(y >= 0 && y < n_classes, "label outside [0, n_classes)");
    ++seen[static_cast<std::size_t>(y)];
    const auto& s = pred_sets[i];
    hit[static_cast<std::size_t>(y)] +=
        std::find(s.begin(), s.end(), y) != s.end();
  }
  std::vector<double> cov(static_cast<std::size_t>(n_classes), kNaN);
  for (int y = 0; y < n_classes; ++y) {
    const auto yy = static_cast<std::size_t>(y);
    if (seen[yy] > 0) cov[yy] = static_cast<double>(hit[yy]) / static_cast<double>(seen[yy]);
  }
  return cov;
}

/// CovGap: 100 x mean absolute deviation of per-class coverage from 1-alpha.
/// NaN entries (classes absent from the evaluation set) are skipped.
inline double cov_gap(std::span<const double> per_class, double alpha) {
  detail::require_alpha(alpha);
  double sum = 0.0;
  std::size_t n = 0;
  for (double c : per_class) {
    if (std::isnan(c)) continue;
    sum += std::abs(c - (1.0 - alpha));
    ++n;
  }
  detail::require(n > 0, "cov_gap requires at least one evaluated class");
  return 100.0 * sum / static_cast<double>(n);
}

/// Mean prediction-set cardinality.
inline double avg_size(const std::vector<std::vector<int>>& pred_sets) {
  detail::require(!pred_sets.empty(), "avg_size requires at least one set");
  double total = 0.0;
  for (const auto& s : pred_sets) total += static_cast<double>(s.size());
  return total / static_cast<double>(pred_sets.size());
}

/// Fraction of (evaluated) classes whose coverage sits at least 10
/// percentage points below nominal; the boundary counts (<=).
inline double frac_under_cov(std::span<const double> per_class, double alpha) {
  detail::require_alpha(alpha);
  const double cutoff = (1.0 - alpha) - 0.1;
  long long under = 0, n = 0;
  for (double c : per_class) {
    if (std::isnan(c)) continue;
    ++n;
    under += (c <= cutoff);
  }
  detail::require(n > 0, "frac_under_cov requires at least one evaluated class");
  return static_cast<double>(under) / static_cast<double>(n);
}

namespace detail {

/// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction,
/// relative tolerance 1e-10. Standard symmetry trick keeps the fraction in
/// its fast-converging region.
inline double incomplete_beta_cf(double a, double b, double x) {
  const double tiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 500; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-10) return h;
  }
  throw error("incomplete beta continued fraction failed to converge");
}

}  // namespace detail

/// Regularized incomplete beta function I_x(a, b) = P(Beta(a,b) <= x).
inline double regularized_incomplete_beta(double a, double b, double x) {
  detail::require(a > 0.0 && b > 0.0, "beta parameters must be positive");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * detail::incomplete_beta_cf(a, b, x) / a;
  }
  return 1.0 - front * detail::incomplete_beta_cf(b, a, 1.0 - x) / b;
}

/// The distribution of a class's conditional coverage under classwise
/// calibration with n continuous scores: Beta(a, b) with a the conformal
/// rank and a + b = n + 1.
struct BetaCoverageLaw {
  long long a = 0;
  long long b = 0;

  /// P(coverage < t).
  double tail_prob(double t) const {
    return regularized_incomplete_beta(static_cast<double>(a),
                                       static_cast<double>(b), t);
  }
  double mean() const {
    return static_cast<double>(a) / static_cast<double>(a + b);
  }
  double variance() const {
    const double da = static_cast<double>(a), db = static_cast<double>(b);
    const double s = da + db;
    return da * db / (s * s * (s + 1.0));
  }
};

/// Coverage law for a class with n calibration examples, or nullopt in the
/// +inf-threshold regime (rank exceeds n), where coverage is the constant 1
/// rather than Beta-distributed.
inline std::optional<BetaCoverageLaw> beta_coverage_law(long long n, double alpha) {
  detail::require(n >= 1, "beta_coverage_law requires n >= 1");
  detail::require_alpha(alpha);
  const long long a = conformal_rank(static_cast<std::size_t>(n), alpha);
  if (a > n) return std::nullopt;
  return BetaCoverageLaw{a, n + 1 - a};
}

/// Class balance: mass of the rarest max(1, floor(0.05*n_classes)) classes
/// relative to their mass under perfect uniformity. 1.0 = balanced, 0 = the
/// rarest classes are empty.
inline double class_balance(std::span<const int> labels, int n_classes) {
  detail::require(n_classes >= 1, "n_classes must be >= 1");
  detail::require(!labels.empty(), "class_balance requires non-empty labels");
  std::vector<long long> counts(static_cast<std::size_t>(n_classes), 0);
  for (int y : labels) {
    detail::require(y >= 0 && y < n_classes, "label outside [0, n_classes)");
    ++counts[static_cast<std::size_t>(y)];
  }
  const long long r = std::max<long long>(
      1, floor_snapped(0.05 * static_cast<double>(n_classes)));
  std::sort(counts.begin(), counts.end());
  long long rare = 0;
  for (long long i = 0; i < r; ++i) rare += counts[static_cast<std::size_t>(i)];
  const double expected = static_cast<double>(r) *
                          static_cast<double>(labels.size()) /
                          static_cast<double>(n_classes);
  return static_cast<double>(rare) / expected;
}

}  // namespace conformal
