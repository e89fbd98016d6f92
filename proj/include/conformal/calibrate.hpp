#pragma once

// Calibrators: fit a threshold per class under one of three regimes.
//
//  standard   one pooled threshold, replicated across classes
//  classwise  an independent threshold per class (+inf when a class is too
//             small for the conformal rank to exist)
//  clustered  classes grouped by score similarity share a per-cluster
//             threshold; rare classes fall into a null cluster calibrated
//             with the pooled rule
//
// Each fitter has a randomized variant that replaces every per-group
// threshold by the exact-coverage randomized threshold, one independent
// Bernoulli draw per non-empty group.

#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "conformal/clustering.hpp"
#include "conformal/common.hpp"
#include "conformal/quantiles.hpp"
#include "conformal/random.hpp"
#include "conformal/scores.hpp"

namespace conformal {

enum class Method { standard, classwise, clustered };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::standard: return "standard";
    case Method::classwise: return "classwise";
    case Method::clustered: return "clustered";
  }
  return "?";
}

/// Calibration data: one conformity score per example plus its true label.
struct LabeledScores {
  std::vector<double> scores;
  std::vector<int> labels;
  int n_classes = 0;

  void validate() const {
    detail::require(scores.size() == labels.size(),
                    "scores and labels must have equal length");
    detail::require(n_classes >= 1, "n_classes must be >= 1");
    for (int y : labels) {
      detail::require(y >= 0 && y < n_classes, "label outside [0, n_classes)");
    }
  }

  std::size_t size() const { return scores.size(); }
};

/// A fitted model: per-class thresholds plus provenance. Immutable after
/// fitting; shareable across threads.
struct CalibratedModel {
  Method method = Method::standard;
  double alpha = 0.1;
  std::vector<double> thresholds;        ///< length n_classes; +inf allowed
  std::optional<ClusterMap> cluster_map; ///< clustered models only
  bool randomized = false;
  std::uint64_t seed = 0;                ///< seed provenance (0 when unused)
  int n_classes = 0;

  int null_class_count() const {
    return cluster_map ? cluster_map->null_count() : 0;
  }
};

namespace detail {

inline std::vector<std::vector<double>> scores_by_class(const LabeledScores& data) {
  std::vector<std::vector<double>> per_class(static_cast<std::size_t>(data.n_classes));
  for (std::size_t i = 0; i < data.size(); ++i) {
    per_class[static_cast<std::size_t>(data.labels[i])].push_back(data.scores[i]);
  }
  return per_class;
}

}  // namespace detail

inline CalibratedModel fit_standard(const LabeledScores& data, double alpha) {
  data.validate();
  detail::require_alpha(alpha);
  CalibratedModel m;
  m.method = Method::standard;
  m.alpha = alpha;
  m.n_classes = data.n_classes;
  const double q = conformal_quantile(data.scores, alpha);
  m.thresholds.assign(static_cast<std::size_t>(data.n_classes), q);
  return m;
}

inline CalibratedModel fit_classwise(const LabeledScores& data, double alpha) {
  data.validate();
  detail::require_alpha(alpha);
  CalibratedModel m;
  m.method = Method::classwise;
  m.alpha = alpha;
  m.n_classes = data.n_classes;
  m.thresholds.reserve(static_cast<std::size_t>(data.n_classes));
  for (const auto& cls : detail::scores_by_class(data)) {
    m.thresholds.push_back(conformal_quantile(cls, alpha));
  }
  return m;
}

/// Result of the data-driven choice of the split fraction and cluster count.
struct TuneResult {
  double gamma = 0.0;      ///< clustering-split fraction K/(75+K)
  int n_clusters = 0;      ///< floor(gamma * n_tilde / 2), before the >=1 rule
  long long n_min = 0;     ///< smallest count among classes present
  long long n_tilde = 0;   ///< max(n_min, smallest finite calibration count)
  int k_eligible = 0;      ///< classes with at least n_tilde examples
  bool fallback_to_standard = false;  ///< n_clusters < 1: too little data
};

/// Choose gamma and the cluster count from class counts. All arithmetic on
/// integers/rationals so the published worked cases reproduce exactly.
inline TuneResult auto_tune(const LabeledScores& data, double alpha) {
  data.validate();
  detail::require_alpha(alpha);
  detail::require(!data.scores.empty(), "auto_tune requires non-empty data");

  std::vector<long long> counts(static_cast<std::size_t>(data.n_classes), 0);
  for (int y : data.labels) ++counts[static_cast<std::size_t>(y)];

  TuneResult t;
  t.n_min = -1;
  for (long long c : counts) {
    if (c > 0 && (t.n_min < 0 || c < t.n_min)) t.n_min = c;
  }
  const long long n_alpha = smallest_finite_calibration_count(alpha);
  t.n_tilde = std::max(t.n_min, n_alpha);
  long long k = 0;
  for (long long c : counts) k += (c >= t.n_tilde);
  t.k_eligible = static_cast<int>(k);
  t.gamma = static_cast<double>(k) / static_cast<double>(75 + k);
  // floor(gamma * n_tilde / 2) evaluated exactly: (k * n_tilde) / (2*(75+k)).
  t.n_clusters = static_cast<int>((k * t.n_tilde) / (2 * (75 + k)));
  t.fallback_to_standard = t.n_clusters < 1;
  return t;
}

inline CalibratedModel fit_clustered(const LabeledScores& data, double alpha,
                                     double gamma, int n_clusters,
                                     std::uint64_t seed) {
  data.validate();
  detail::require_alpha(alpha);
  detail::require(gamma >= 0.0 && gamma <= 1.0, "gamma must lie in [0, 1]");
  detail::require(n_clusters >= 1, "clustered fitting requires n_clusters >= 1");

  const std::size_t n = data.size();
  const auto n1 = static_cast<std::size_t>(
      std::max<long long>(0, floor_snapped(gamma * static_cast<double>(n))));

  // Uniform random index split: first floor(gamma*N) shuffled indices form
  // the clustering set, the rest the proper calibration set.
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  {
    Rng rng(derive_seed(seed, seed_purpose::split));
    rng.shuffle(idx);
  }

  std::vector<double> d1_scores;
  std::vector<int> d1_labels;
  d1_scores.reserve(n1);
  d1_labels.reserve(n1);
  for (std::size_t i = 0; i < n1; ++i) {
    d1_scores.push_back(data.scores[idx[i]]);
    d1_labels.push_back(data.labels[idx[i]]);
  }
  std::vector<double> d2_scores;
  std::vector<int> d2_labels;
  d2_scores.reserve(n - n1);
  d2_labels.reserve(n - n1);
  for (std::size_t i = n1; i < n; ++i) {
    d2_scores.push_back(data.scores[idx[i]]);
    d2_labels.push_back(data.labels[idx[i]]);
  }

  const ClusterMap map = build_cluster_map(d1_scores, d1_labels, data.n_classes,
                                           alpha, n_clusters,
                                           derive_seed(seed, seed_purpose::clustering));

  // Per-cluster thresholds from the proper calibration set; the null
  // threshold pools all of it.
  std::vector<std::vector<double>> cluster_scores(
      static_cast<std::size_t>(map.n_clusters));
  for (std::size_t i = 0; i < d2_scores.size(); ++i) {
    const int m = map.assignment[static_cast<std::size_t>(d2_labels[i])];
    if (m != kNullCluster) cluster_scores[static_cast<std::size_t>(m)].push_back(d2_scores[i]);
  }
  std::vector<double> cluster_q(static_cast<std::size_t>(map.n_clusters), kInf);
  for (int m = 0; m < map.n_clusters; ++m) {
    cluster_q[static_cast<std::size_t>(m)] =
        conformal_quantile(cluster_scores[static_cast<std::size_t>(m)], alpha);
  }
  const double null_q = conformal_quantile(d2_scores, alpha);

  CalibratedModel model;
  model.method = Method::clustered;
  model.alpha = alpha;
  model.n_classes = data.n_classes;
  model.seed = seed;
  model.cluster_map = map;
  model.thresholds.reserve(static_cast<std::size_t>(data.n_classes));
  for (int y = 0; y < data.n_classes; ++y) {
    const int m = map.assignment[static_cast<std::size_t>(y)];
    model.thresholds.push_back(m == kNullCluster ? null_q
                                                 : cluster_q[static_cast<std::size_t>(m)]);
  }
  return model;
}

namespace detail {

/// Randomize one group's threshold: draw Bernoulli(p_keep) from `coin` and
/// mix the two adjacent order statistics. Callers must invoke this in a
/// fixed group order and skip empty groups (which keep +inf and consume no
/// draw) so models are reproducible from the seed alone.
inline double randomize_group(std::span<const double> group_scores, double alpha,
                              Rng& coin) {
  const bool draw = coin.bernoulli(randomized_keep_probability(group_scores.size(), alpha));
  return randomized_conformal_quantile(group_scores, alpha, draw).chosen;
}

}  // namespace detail

inline CalibratedModel fit_standard_randomized(const LabeledScores& data,
                                               double alpha, std::uint64_t seed) {
  CalibratedModel m = fit_standard(data, alpha);
  m.randomized = true;
  m.seed = seed;
  if (!data.scores.empty()) {
    Rng coin(derive_seed(seed, seed_purpose::bernoulli));
    m.thresholds.assign(m.thresholds.size(),
                        detail::randomize_group(data.scores, alpha, coin));
  }
  return m;
}

inline CalibratedModel fit_classwise_randomized(const LabeledScores& data,
                                                double alpha, std::uint64_t seed) {
  CalibratedModel m = fit_classwise(data, alpha);
  m.randomized = true;
  m.seed = seed;
  Rng coin(derive_seed(seed, seed_purpose::bernoulli));
  const auto per_class = detail::scores_by_class(data);
  for (int y = 0; y < data.n_classes; ++y) {
    const auto& cls = per_class[static_cast<std::size_t>(y)];
    if (cls.empty()) continue;  // threshold stays +inf, no draw consumed
    m.thresholds[static_cast<std::size_t>(y)] = detail::randomize_group(cls, alpha, coin);
  }
  return m;
}

/// Randomized clustered fit: identical split and clustering to the plain
/// fit (same seed lanes), with each per-cluster threshold and the null
/// threshold replaced by its randomized counterpart. Draw order: clusters
/// 0..M-1, then the null group; groups with no proper-calibration scores
/// keep +inf and consume no draw.
inline CalibratedModel fit_clustered_randomized(const LabeledScores& data,
                                                double alpha, double gamma,
                                                int n_clusters, std::uint64_t seed) {
  CalibratedModel m = fit_clustered(data, alpha, gamma, n_clusters, seed);
  m.randomized = true;

  // Reconstruct the proper-calibration (D2) grouping exactly as fit_clustered
  // built it: same shuffle stream, same split point.
  const std::size_t n = data.size();
  const auto n1 = static_cast<std::size_t>(
      std::max<long long>(0, floor_snapped(gamma * static_cast<double>(n))));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  {
    Rng rng(derive_seed(seed, seed_purpose::split));
    rng.shuffle(idx);
  }
  const ClusterMap& map = *m.cluster_map;
  std::vector<std::vector<double>> cluster_scores(
      static_cast<std::size_t>(map.n_clusters));
  std::vector<double> d2_scores;
  d2_scores.reserve(n - n1);
  for (std::size_t i = n1; i < n; ++i) {
    const double s = data.scores[idx[i]];
    d2_scores.push_back(s);
    const int c = map.assignment[static_cast<std::size_t>(data.labels[idx[i]])];
    if (c != kNullCluster) cluster_scores[static_cast<std::size_t>(c)].push_back(s);
  }

  Rng coin(derive_seed(seed, seed_purpose::bernoulli));
  std::vector<double> cluster_q(static_cast<std::size_t>(map.n_clusters), kInf);
  for (int c = 0; c < map.n_clusters; ++c) {
    const auto& grp = cluster_scores[static_cast<std::size_t>(c)];
    if (!grp.empty()) {
      cluster_q[static_cast<std::size_t>(c)] = detail::randomize_group(grp, alpha, coin);
    }
  }
  double null_q = kInf;
  if (!d2_scores.empty()) null_q = detail::randomize_group(d2_scores, alpha, coin);

  for (int y = 0; y < data.n_classes; ++y) {
    const int c = map.assignment[static_cast<std::size_t>(y)];
    m.thresholds[static_cast<std::size_t>(y)] =
        c == kNullCluster ? null_q : cluster_q[static_cast<std::size_t>(c)];
  }
  return m;
}

/// Prediction set: the labels whose candidate score passes their class
/// threshold (inclusive; +inf always passes). Returned sorted ascending.
inline std::vector<int> predict_set(const CalibratedModel& model,
                                    std::span<const double> candidate_scores) {
  detail::require(candidate_scores.size() ==
                      static_cast<std::size_t>(model.n_classes),
                  "candidate score count must equal the model's class count");
  std::vector<int> set;
  for (int y = 0; y < model.n_classes; ++y) {
    if (candidate_scores[static_cast<std::size_t>(y)] <=
        model.thresholds[static_cast<std::size_t>(y)]) {
      set.push_back(y);
    }
  }
  return set;
}

}  // namespace conformal
