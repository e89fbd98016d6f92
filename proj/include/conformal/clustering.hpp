#pragma once

// Class clustering for cluster-conditional calibration. Each class with
// enough calibration examples is embedded as a short vector of score
// quantiles; classes are then grouped by weighted k-means (weight = sqrt of
// the class count) so that classes with similar score distributions share a
// threshold. Classes with too few examples are assigned to a catch-all null
// cluster.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "conformal/common.hpp"
#include "conformal/quantiles.hpp"
#include "conformal/random.hpp"

namespace conformal {

/// Cluster id used for classes that fall back to the marginal threshold.
inline constexpr int kNullCluster = -1;

/// Class -> cluster assignment. `assignment[y]` is a cluster in
/// [0, n_clusters) or kNullCluster.
struct ClusterMap {
  std::vector<int> assignment;
  int n_clusters = 0;

  int null_count() const {
    int c = 0;
    for (int a : assignment) c += (a == kNullCluster);
    return c;
  }
};

/// Quantile levels the embedding is evaluated at: {0.5,...,0.9} plus 1-alpha,
/// deduplicated and sorted.
inline std::vector<double> embedding_levels(double alpha) {
  detail::require_alpha(alpha);
  std::vector<double> levels = {0.5, 0.6, 0.7, 0.8, 0.9, 1.0 - alpha};
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  return levels;
}

/// Minimum per-class calibration count for a class to be clustered rather
/// than sent to the null cluster: 1/min(alpha, 0.1) - 1.
inline double embedding_min_count(double alpha) {
  detail::require_alpha(alpha);
  return 1.0 / std::min(alpha, 0.1) - 1.0;
}

/// One embedded class: its quantile vector and k-means weight.
struct ClassEmbedding {
  int class_id = 0;
  std::vector<double> quantiles;
  double weight = 0.0;
};

/// Embed one class from its calibration scores, or nullopt when the class
/// has too few examples and must go to the null cluster. Quantiles use the
/// finite-sample-adjusted level ceil((n+1)*tau)/n.
inline std::optional<ClassEmbedding> embed_class(std::span<const double> class_scores,
                                                 double alpha, int class_id = 0) {
  const std::size_t n = class_scores.size();
  // Guard the count comparison against the threshold being a hair above an
  // integer it mathematically equals.
  if (static_cast<double>(n) + 1e-9 < embedding_min_count(alpha)) return std::nullopt;

  std::vector<double> sorted(class_scores.begin(), class_scores.end());
  std::sort(sorted.begin(), sorted.end());
  ClassEmbedding emb;
  emb.class_id = class_id;
  emb.weight = std::sqrt(static_cast<double>(n));
  for (double tau : embedding_levels(alpha)) {
    const long long k = std::min<long long>(
        detail::quantile_index(static_cast<double>(n + 1) * tau / static_cast<double>(n), n),
        static_cast<long long>(n));
    emb.quantiles.push_back(sorted[static_cast<std::size_t>(k - 1)]);
  }
  return emb;
}

/// Weighted k-means configuration.
struct KMeansOptions {
  int max_iter = 300;
  double tol = 1e-6;   ///< convergence: max centroid movement below this
  int n_restarts = 10;
};

struct KMeansResult {
  std::vector<int> assignment;                 ///< point -> cluster
  std::vector<std::vector<double>> centroids;  ///< k x dim
  double objective = 0.0;  ///< sum_i w_i * ||x_i - c_{a(i)}||^2
  int iterations = 0;
};

namespace detail {

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

/// Sample an index proportionally to `mass`; falls back to the first
/// positive entry if rounding pushes the cursor past the end.
inline std::size_t sample_by_mass(const std::vector<double>& mass, double total, Rng& rng) {
  double cursor = rng.uniform01() * total;
  for (std::size_t i = 0; i < mass.size(); ++i) {
    cursor -= mass[i];
    if (cursor < 0.0 && mass[i] > 0.0) return i;
  }
  for (std::size_t i = mass.size(); i-- > 0;) {
    if (mass[i] > 0.0) return i;
  }
  return 0;
}

/// One k-means run: weighted k-means++ seeding, Lloyd iterations, empty
/// clusters reseeded at the point farthest (weighted) from its assigned
/// centroid. The weighted objective is verified to be non-increasing.
inline KMeansResult kmeans_single(const std::vector<std::vector<double>>& points,
                                  const std::vector<double>& weights, int k,
                                  const KMeansOptions& opts, Rng& rng) {
  const std::size_t n = points.size();
  const std::size_t dim = points[0].size();

  // --- weighted k-means++ seeding ---
  std::vector<std::vector<double>> centroids;
  centroids.reserve(static_cast<std::size_t>(k));
  {
    double total_w = 0.0;
    for (double w : weights) total_w += w;
    centroids.push_back(points[sample_by_mass(weights, total_w, rng)]);
    std::vector<double> d2(n, 0.0);
    while (static_cast<int>(centroids.size()) < k) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double best = sq_dist(points[i], centroids[0]);
        for (std::size_t c = 1; c < centroids.size(); ++c) {
          best = std::min(best, sq_dist(points[i], centroids[c]));
        }
        d2[i] = weights[i] * best;
        total += d2[i];
      }
      if (total <= 0.0) {
        // All points coincide with a centroid; seed at the first point not
        // already chosen (duplicates are harmless, repair handles them).
        centroids.push_back(points[centroids.size() % n]);
      } else {
        centroids.push_back(points[sample_by_mass(d2, total, rng)]);
      }
    }
  }

  std::vector<int> assignment(n, 0);
  auto assign_and_objective = [&]() {
    double obj = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      int best_c = 0;
      double best_d = sq_dist(points[i], centroids[0]);
      for (int c = 1; c < k; ++c) {
        const double d = sq_dist(points[i], centroids[static_cast<std::size_t>(c)]);
        if (d < best_d) {
          best_d = d;
          best_c = c;
        }
      }
      assignment[i] = best_c;
      obj += weights[i] * best_d;
    }
    return obj;
  };

  double obj = assign_and_objective();
  int iter = 0;
  for (; iter < opts.max_iter; ++iter) {
    const double prev_obj = obj;

    // Update step: weighted means; empty clusters are reseeded at the point
    // farthest (weighted) from its currently assigned centroid. Both moves
    // keep the objective non-increasing.
    std::vector<std::vector<double>> next = centroids;
    std::vector<double> wsum(static_cast<std::size_t>(k), 0.0);
    {
      std::vector<std::vector<double>> sums(
          static_cast<std::size_t>(k), std::vector<double>(dim, 0.0));
      for (std::size_t i = 0; i < n; ++i) {
        const auto c = static_cast<std::size_t>(assignment[i]);
        wsum[c] += weights[i];
        for (std::size_t d = 0; d < dim; ++d) sums[c][d] += weights[i] * points[i][d];
      }
      for (int c = 0; c < k; ++c) {
        const auto cc = static_cast<std::size_t>(c);
        if (wsum[cc] > 0.0) {
          for (std::size_t d = 0; d < dim; ++d) next[cc][d] = sums[cc][d] / wsum[cc];
        } else {
          std::size_t far_i = 0;
          double far_d = -1.0;
          for (std::size_t i = 0; i < n; ++i) {
            const double d = weights[i] *
                sq_dist(points[i], centroids[static_cast<std::size_t>(assignment[i])]);
            if (d > far_d) {
              far_d = d;
              far_i = i;
            }
          }
          next[cc] = points[far_i];
        }
      }
    }

    double moved = 0.0;
    for (int c = 0; c < k; ++c) {
      const auto cc = static_cast<std::size_t>(c);
      moved = std::max(moved, std::sqrt(sq_dist(next[cc], centroids[cc])));
    }
    centroids = std::move(next);
    obj = assign_and_objective();

    // The Lloyd objective never increases under mean updates, reassignment,
    // or the reseeding rule above; a rise beyond rounding noise means the
    // implementation is broken, so fail loudly even in release builds.
    if (obj > prev_obj + 1e-9 * std::max(1.0, std::abs(prev_obj))) {
      throw std::logic_error("k-means objective increased between iterations");
    }

    if (moved < opts.tol) {
      ++iter;
      break;
    }
  }

  KMeansResult res;
  res.assignment = std::move(assignment);
  res.centroids = std::move(centroids);
  res.objective = obj;
  res.iterations = iter;
  return res;
}

}  // namespace detail

/// Weighted k-means with restarts; the run with the lowest weighted
/// objective wins (earlier restart wins ties).
inline KMeansResult weighted_kmeans(const std::vector<std::vector<double>>& points,
                                    const std::vector<double>& weights, int k,
                                    std::uint64_t seed,
                                    const KMeansOptions& opts = {}) {
  detail::require(!points.empty(), "k-means requires at least one point");
  detail::require(points.size() == weights.size(),
                  "k-means points and weights must have equal length");
  detail::require(k >= 1, "k-means requires k >= 1");
  detail::require(static_cast<std::size_t>(k) <= points.size(),
                  "k-means requires k <= number of points");
  const std::size_t dim = points[0].size();
  detail::require(dim > 0, "k-means points must have positive dimension");
  for (const auto& p : points) {
    detail::require(p.size() == dim, "k-means points must share one dimension");
  }
  for (double w : weights) {
    detail::require(w > 0.0, "k-means weights must be positive");
  }

  KMeansResult best;
  bool have = false;
  for (int r = 0; r < opts.n_restarts; ++r) {
    Rng rng(derive_seed(seed, seed_purpose::restart, static_cast<std::uint64_t>(r)));
    KMeansResult run = detail::kmeans_single(points, weights, k, opts, rng);
    if (!have || run.objective < best.objective) {
      best = std::move(run);
      have = true;
    }
  }
  return best;
}

/// Build the class -> cluster map from calibration scores and labels.
/// Classes below the minimum-count rule (and classes absent from the data)
/// go to the null cluster; the rest are embedded and clustered into at most
/// `n_clusters` groups (reduced to the number of clusterable classes when
/// fewer).
inline ClusterMap build_cluster_map(std::span<const double> scores,
                                    std::span<const int> labels, int n_classes,
                                    double alpha, int n_clusters,
                                    std::uint64_t seed) {
  detail::require_alpha(alpha);
  detail::require(scores.size() == labels.size(),
                  "scores and labels must have equal length");
  detail::require(n_classes >= 1, "n_classes must be >= 1");
  detail::require(n_clusters >= 1, "n_clusters must be >= 1");

  std::vector<std::vector<double>> per_class(static_cast<std::size_t>(n_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    detail::require(y >= 0 && y < n_classes, "label outside [0, n_classes)");
    per_class[static_cast<std::size_t>(y)].push_back(scores[i]);
  }

  std::vector<ClassEmbedding> embeddings;
  for (int y = 0; y < n_classes; ++y) {
    if (auto emb = embed_class(per_class[static_cast<std::size_t>(y)], alpha, y)) {
      embeddings.push_back(std::move(*emb));
    }
  }

  ClusterMap map;
  map.assignment.assign(static_cast<std::size_t>(n_classes), kNullCluster);
  if (embeddings.empty()) {
    map.n_clusters = 0;
    return map;
  }

  const int k = std::min<int>(n_clusters, static_cast<int>(embeddings.size()));
  std::vector<std::vector<double>> points;
  std::vector<double> weights;
  points.reserve(embeddings.size());
  weights.reserve(embeddings.size());
  for (auto& e : embeddings) {
    points.push_back(e.quantiles);
    weights.push_back(e.weight);
  }
  const KMeansResult km = weighted_kmeans(points, weights, k, seed);
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    map.assignment[static_cast<std::size_t>(embeddings[i].class_id)] = km.assignment[i];
  }
  map.n_clusters = k;
  return map;
}

/// Two-sample Kolmogorov-Smirnov statistic sup_t |F_a(t) - F_b(t)|.
inline double ks_statistic(std::span<const double> a, std::span<const double> b) {
  detail::require(!a.empty() && !b.empty(), "KS statistic requires non-empty samples");
  std::vector<double> sa(a.begin(), a.end());
  std::vector<double> sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  const double na = static_cast<double>(sa.size());
  const double nb = static_cast<double>(sb.size());
  std::size_t i = 0, j = 0;
  double stat = 0.0;
  while (i < sa.size() && j < sb.size()) {
    const double t = std::min(sa[i], sb[j]);
    while (i < sa.size() && sa[i] <= t) ++i;
    while (j < sb.size() && sb[j] <= t) ++j;
    stat = std::max(stat, std::abs(static_cast<double>(i) / na -
                                   static_cast<double>(j) / nb));
  }
  return stat;
}

/// Per-cluster heterogeneity diagnostic: the largest pairwise KS statistic
/// between member classes' score samples (0 for clusters with fewer than two
/// members). Entry m describes cluster m. The KS statistic stands in for the
/// total-variation distance, which finite samples cannot estimate directly.
inline std::vector<double> tv_diagnostic(const ClusterMap& map,
                                         std::span<const double> scores,
                                         std::span<const int> labels) {
  detail::require(scores.size() == labels.size(),
                  "scores and labels must have equal length");
  const int n_classes = static_cast<int>(map.assignment.size());
  std::vector<std::vector<double>> per_class(static_cast<std::size_t>(n_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    detail::require(y >= 0 && y < n_classes, "label outside [0, n_classes)");
    per_class[static_cast<std::size_t>(y)].push_back(scores[i]);
  }
  std::vector<double> out(static_cast<std::size_t>(map.n_clusters), 0.0);
  for (int m = 0; m < map.n_clusters; ++m) {
    std::vector<int> members;
    for (int y = 0; y < n_classes; ++y) {
      if (map.assignment[static_cast<std::size_t>(y)] == m &&
          !per_class[static_cast<std::size_t>(y)].empty()) {
        members.push_back(y);
      }
    }
    double worst = 0.0;
    for (std::size_t p = 0; p < members.size(); ++p) {
      for (std::size_t q = p + 1; q < members.size(); ++q) {
        worst = std::max(worst,
                         ks_statistic(per_class[static_cast<std::size_t>(members[p])],
                                      per_class[static_cast<std::size_t>(members[q])]));
      }
    }
    out[static_cast<std::size_t>(m)] = worst;
  }
  return out;
}

}  // namespace conformal
