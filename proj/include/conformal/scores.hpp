#pragma once

// Conformity scores computed from a classifier's probability row. All three
// scores are "smaller is better": the prediction set at threshold t collects
// the labels whose score is <= t.
//
//  softmax  s(x,y) = 1 - p_y
//  aps      s(x,y) = sum of probabilities ranked strictly above y + u * p_y,
//           with classes ranked by descending probability, ties broken by
//           ascending class index, and u ~ U[0,1] supplied by the caller
//  raps     aps + max(0, lambda * (rank(y) - k_reg)) with 1-based ranks
//
// One probability row scored at several candidate labels must reuse a single
// u so the per-row ranking stays internally consistent.

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

#include "conformal/common.hpp"

namespace conformal {

enum class ScoreKind { softmax, aps, raps };

inline const char* to_string(ScoreKind k) {
  switch (k) {
    case ScoreKind::softmax: return "softmax";
    case ScoreKind::aps: return "aps";
    case ScoreKind::raps: return "raps";
  }
  return "?";
}

/// Score selection plus the RAPS regularisation knobs.
struct ScoreSpec {
  ScoreKind kind = ScoreKind::softmax;
  double raps_lambda = 0.01;
  int raps_k_reg = 5;
};

/// Probability rows may miss exact normalisation by at most this much
/// before they are rejected rather than rescaled.
inline constexpr double kRowSumTolerance = 1e-4;

/// Validate one probability row in place: entries must be non-negative and
/// sum to 1 within kRowSumTolerance; rows inside the tolerance are rescaled
/// to sum exactly to 1.
inline void validate_probability_row(std::span<double> row) {
  detail::require(!row.empty(), "probability row must be non-empty");
  double sum = 0.0;
  for (double v : row) {
    detail::require(v >= 0.0, "probability row has a negative entry");
    sum += v;
  }
  detail::require(std::abs(sum - 1.0) <= kRowSumTolerance,
                  "probability row does not sum to 1 within tolerance");
  if (sum != 1.0) {
    for (double& v : row) v /= sum;
  }
}

namespace detail {

inline void require_label(std::span<const double> row, int label) {
  require(label >= 0 && static_cast<std::size_t>(label) < row.size(),
          "label index out of range for probability row");
}

inline void require_u(double u) {
  require(u >= 0.0 && u <= 1.0, "score randomisation u must lie in [0, 1]");
}

/// true iff class j ranks strictly above class y (descending probability,
/// ascending index on ties).
inline bool outranks(std::span<const double> row, int j, int y) {
  return row[j] > row[y] || (row[j] == row[y] && j < y);
}

}  // namespace detail

inline double softmax_score(std::span<const double> row, int label) {
  detail::require_label(row, label);
  return 1.0 - row[label];
}

inline double aps_score(std::span<const double> row, int label, double u) {
  detail::require_label(row, label);
  detail::require_u(u);
  double above = 0.0;
  for (int j = 0; j < static_cast<int>(row.size()); ++j) {
    if (detail::outranks(row, j, label)) above += row[j];
  }
  return above + u * row[label];
}

inline double raps_score(std::span<const double> row, int label, double u,
                         double lambda, int k_reg) {
  detail::require_label(row, label);
  detail::require_u(u);
  double above = 0.0;
  int rank = 1;
  for (int j = 0; j < static_cast<int>(row.size()); ++j) {
    if (detail::outranks(row, j, label)) {
      above += row[j];
      ++rank;
    }
  }
  const double penalty = std::max(0.0, lambda * static_cast<double>(rank - k_reg));
  return above + u * row[label] + penalty;
}

/// Score one (row, label) pair under `spec`.
inline double score_label(std::span<const double> row, int label,
                          const ScoreSpec& spec, double u) {
  switch (spec.kind) {
    case ScoreKind::softmax: return softmax_score(row, label);
    case ScoreKind::aps: return aps_score(row, label, u);
    case ScoreKind::raps:
      return raps_score(row, label, u, spec.raps_lambda, spec.raps_k_reg);
  }
  throw argument_error("unknown score kind");
}

/// Score every candidate label of one row, reusing a single u. Writes
/// row.size() values into `out`. O(K log K).
inline void score_all_labels(std::span<const double> row, const ScoreSpec& spec,
                             double u, std::span<double> out) {
  detail::require(out.size() == row.size(),
                  "output span size must match row size");
  const int k = static_cast<int>(row.size());
  if (spec.kind == ScoreKind::softmax) {
    for (int j = 0; j < k; ++j) out[j] = 1.0 - row[j];
    return;
  }
  detail::require_u(u);
  // Rank classes: descending probability, ascending index on ties.
  std::vector<int> order(row.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (row[a] != row[b]) return row[a] > row[b];
    return a < b;
  });
  double prefix = 0.0;
  for (int r = 0; r < k; ++r) {
    const int y = order[r];
    double s = prefix + u * row[y];
    if (spec.kind == ScoreKind::raps) {
      s += std::max(0.0, spec.raps_lambda * static_cast<double>(r + 1 - spec.raps_k_reg));
    }
    out[y] = s;
    prefix += row[y];
  }
}

inline std::vector<double> score_all_labels(std::span<const double> row,
                                            const ScoreSpec& spec, double u) {
  std::vector<double> out(row.size());
  score_all_labels(row, spec, u, out);
  return out;
}

}  // namespace conformal
