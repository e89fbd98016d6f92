#pragma once

// Finite-sample quantiles and conformal thresholds. The quantile of a
// multiset at level tau is the smallest value such that a tau fraction of
// the points lie at or below it, i.e. the ceil(tau*n)-th smallest; levels
// above 1 yield +infinity. Conformal calibration evaluates this at the
// inflated level ceil((n+1)(1-alpha))/n, and the randomized variant mixes
// the two adjacent order statistics so coverage is exactly 1-alpha.

#include <algorithm>
#include <span>
#include <vector>

#include "conformal/common.hpp"

namespace conformal {

namespace detail {

/// 1-based order-statistic index selected by level tau on n points.
/// Values above n mean "+infinity"; levels at or below 0 clamp to the
/// minimum.
inline long long quantile_index(double tau, std::size_t n) {
  const long long k = ceil_snapped(tau * static_cast<double>(n));
  return std::max<long long>(k, 1);
}

/// k-th smallest (1-based) of an unsorted span.
inline double kth_smallest(std::span<const double> values, long long k) {
  std::vector<double> buf(values.begin(), values.end());
  auto mid = buf.begin() + (k - 1);
  std::nth_element(buf.begin(), mid, buf.end());
  return *mid;
}

}  // namespace detail

/// Calibration rank k_alpha = ceil((n+1)(1-alpha)). The threshold is finite
/// iff k_alpha <= n.
inline long long conformal_rank(std::size_t n, double alpha) {
  detail::require_alpha(alpha);
  return ceil_snapped(static_cast<double>(n + 1) * (1.0 - alpha));
}

/// Smallest calibration size for which the conformal threshold is finite,
/// i.e. the least n with ceil((n+1)(1-alpha)) <= n.
inline long long smallest_finite_calibration_count(double alpha) {
  detail::require_alpha(alpha);
  long long n = std::max<long long>(1, ceil_snapped((1.0 - alpha) / alpha));
  while (n > 1 && conformal_rank(static_cast<std::size_t>(n - 1), alpha) <= n - 1) --n;
  while (conformal_rank(static_cast<std::size_t>(n), alpha) > n) ++n;
  return n;
}

/// Finite-sample quantile of `values` at level tau (see header comment).
/// Levels above 1 give +infinity; levels at or below 0 give the minimum.
inline double finite_quantile(double tau, std::span<const double> values) {
  const std::size_t n = values.size();
  detail::require(n > 0, "finite_quantile requires a non-empty value set");
  const long long k = detail::quantile_index(tau, n);
  if (k > static_cast<long long>(n)) return kInf;
  return detail::kth_smallest(values, k);
}

/// Conformal threshold: the quantile at level ceil((n+1)(1-alpha))/n, or
/// +infinity when n is too small for that rank to exist.
inline double conformal_quantile(std::span<const double> scores, double alpha) {
  detail::require_alpha(alpha);
  const std::size_t n = scores.size();
  if (n == 0) return kInf;
  const long long k = conformal_rank(n, alpha);
  if (k > static_cast<long long>(n)) return kInf;
  return detail::kth_smallest(scores, k);
}

/// Outcome of randomized conformal calibration on one score multiset.
struct RandomizedThreshold {
  double q_hat = kInf;    ///< upper candidate: order statistic k
  double q_tilde = kInf;  ///< lower candidate: order statistic k-1 (min when k=1)
  double p_keep = 1.0;    ///< probability of keeping q_hat
  bool bern_draw = true;  ///< the Bernoulli outcome that was applied
  double chosen = kInf;   ///< q_hat if bern_draw else q_tilde
};

/// Probability of keeping the upper candidate q_hat in the randomized
/// threshold: with k = ceil((n+1)(1-alpha)) and
///   b = k/(n+1) - (1-alpha),   c = (1-alpha) - (k-1)/(n+1),
/// the keep probability is c/(b+c) (and b + c = 1/(n+1)). Callers draw
/// Bernoulli(p_keep) themselves and pass the outcome in, so fitting stays a
/// pure function of its inputs.
inline double randomized_keep_probability(std::size_t n, double alpha) {
  detail::require_alpha(alpha);
  detail::require(n > 0, "randomized threshold requires a non-empty score set");
  const long long k = conformal_rank(n, alpha);
  const double np1 = static_cast<double>(n + 1);
  const double b = static_cast<double>(k) / np1 - (1.0 - alpha);
  const double c = (1.0 - alpha) - static_cast<double>(k - 1) / np1;
  return std::clamp(c / (b + c), 0.0, 1.0);
}

/// Randomized threshold with exact 1-alpha coverage under exchangeability:
/// q_hat (order statistic k) is kept with probability p_keep, otherwise the
/// threshold drops to q_tilde (order statistic k-1, clamped to the minimum).
inline RandomizedThreshold randomized_conformal_quantile(
    std::span<const double> scores, double alpha, bool bern_draw) {
  detail::require_alpha(alpha);
  const std::size_t n = scores.size();
  detail::require(n > 0, "randomized threshold requires a non-empty score set");
  const long long k = conformal_rank(n, alpha);

  RandomizedThreshold out;
  out.p_keep = randomized_keep_probability(n, alpha);
  out.q_hat = k > static_cast<long long>(n) ? kInf : detail::kth_smallest(scores, k);
  out.q_tilde = detail::kth_smallest(scores, std::max<long long>(k - 1, 1));
  out.bern_draw = bern_draw;
  out.chosen = bern_draw ? out.q_hat : out.q_tilde;
  return out;
}

}  // namespace conformal
