#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "conformal/clustering.hpp"
#include "conformal/random.hpp"
#include "oracles.hpp"

using namespace conformal;

TEST_CASE("embedding levels dedupe and sort", "[clustering]") {
  CHECK(embedding_levels(0.1) == std::vector<double>{0.5, 0.6, 0.7, 0.8, 0.9});
  const auto l05 = embedding_levels(0.05);
  REQUIRE(l05.size() == 6);
  CHECK(l05.back() == 0.95);
  // 1 - 0.2 = 0.8 collides with a base level too.
  CHECK(embedding_levels(0.2).size() == 5);
  const auto l35 = embedding_levels(0.35);
  REQUIRE(l35.size() == 6);
  CHECK(std::is_sorted(l35.begin(), l35.end()));
  CHECK(l35.front() == 0.5);
  CHECK(l35[2] == Catch::Approx(0.65));  // 1 - 0.35 sorts into the middle
}

TEST_CASE("embedding minimum count", "[clustering]") {
  CHECK(embedding_min_count(0.1) == Catch::Approx(9.0));
  CHECK(embedding_min_count(0.05) == Catch::Approx(19.0));
  // alpha above 0.1 is clamped to 0.1 in the rule.
  CHECK(embedding_min_count(0.2) == Catch::Approx(9.0));
}

TEST_CASE("embed_class examples", "[clustering]") {
  std::vector<double> nine{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  const auto emb = embed_class(nine, 0.1, 7);
  REQUIRE(emb.has_value());
  CHECK(emb->class_id == 7);
  CHECK(emb->weight == Catch::Approx(3.0));
  REQUIRE(emb->quantiles.size() == 5);
  CHECK(emb->quantiles[0] == Catch::Approx(0.5));
  CHECK(emb->quantiles[1] == Catch::Approx(0.6));
  CHECK(emb->quantiles[2] == Catch::Approx(0.7));
  CHECK(emb->quantiles[3] == Catch::Approx(0.8));
  CHECK(emb->quantiles[4] == Catch::Approx(0.9));

  std::vector<double> eight(nine.begin(), nine.begin() + 8);
  CHECK_FALSE(embed_class(eight, 0.1).has_value());
  // At alpha=0.05 the bar rises to 19.
  CHECK_FALSE(embed_class(nine, 0.05).has_value());
  std::vector<double> nineteen(19);
  std::iota(nineteen.begin(), nineteen.end(), 1.0);
  CHECK(embed_class(nineteen, 0.05).has_value());
}

TEST_CASE("embed_class matches the order-statistic oracle", "[clustering]") {
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const double alpha = (trial % 2 == 0) ? 0.1 : 0.05;
    const std::size_t n =
        static_cast<std::size_t>(embedding_min_count(alpha)) + rng.below(40);
    std::vector<double> scores(n);
    for (auto& s : scores) s = rng.uniform01();
    const auto emb = embed_class(scores, alpha);
    REQUIRE(emb.has_value());
    CHECK(emb->weight == Catch::Approx(std::sqrt(static_cast<double>(n))));
    CHECK(std::is_sorted(emb->quantiles.begin(), emb->quantiles.end()));
    const auto levels = embedding_levels(alpha);
    REQUIRE(emb->quantiles.size() == levels.size());
    std::vector<double> sorted = scores;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t t = 0; t < levels.size(); ++t) {
      // Adjusted rank ceil((n+1)*tau), clamped to n. Levels here are exact
      // multiples of 1/20, so integer rational arithmetic is an exact oracle.
      const auto tau_p = static_cast<long long>(std::llround(levels[t] * 20.0));
      const long long k = std::min<long long>(
          oracle::ceil_div((static_cast<long long>(n) + 1) * tau_p, 20),
          static_cast<long long>(n));
      CHECK(emb->quantiles[t] == sorted[static_cast<std::size_t>(k - 1)]);
    }
    // Permutation invariance.
    std::vector<double> shuffled = scores;
    Rng sh(trial);
    sh.shuffle(shuffled);
    const auto emb2 = embed_class(shuffled, alpha);
    REQUIRE(emb2.has_value());
    CHECK(emb2->quantiles == emb->quantiles);
  }
}

TEST_CASE("weighted kmeans separates two far groups", "[clustering]") {
  const std::vector<std::vector<double>> pts{{0.0}, {0.1}, {10.0}, {10.1}};
  const std::vector<double> w{1.0, 1.0, 1.0, 1.0};
  const auto res = weighted_kmeans(pts, w, 2, 42);
  CHECK(res.assignment[0] == res.assignment[1]);
  CHECK(res.assignment[2] == res.assignment[3]);
  CHECK(res.assignment[0] != res.assignment[2]);
  std::vector<double> cents{res.centroids[0][0], res.centroids[1][0]};
  std::sort(cents.begin(), cents.end());
  CHECK(cents[0] == Catch::Approx(0.05));
  CHECK(cents[1] == Catch::Approx(10.05));
  CHECK(res.objective ==
        Catch::Approx(oracle::brute_force_kmeans_objective(pts, w, 2)));
}

TEST_CASE("weighted kmeans with k=1 returns the weighted mean", "[clustering]") {
  const std::vector<std::vector<double>> pts{{1.0, 0.0}, {3.0, 4.0}};
  const std::vector<double> w{1.0, 3.0};
  const auto res = weighted_kmeans(pts, w, 1, 7);
  REQUIRE(res.centroids.size() == 1);
  CHECK(res.centroids[0][0] == Catch::Approx(2.5));
  CHECK(res.centroids[0][1] == Catch::Approx(3.0));
  CHECK(res.assignment == std::vector<int>{0, 0});
}

TEST_CASE("doubled weight equals a duplicated point", "[clustering]") {
  const std::vector<std::vector<double>> pts_w{{0.0}, {1.0}, {4.0}, {9.0}};
  const std::vector<double> w{1.0, 2.0, 1.0, 1.0};
  const std::vector<std::vector<double>> pts_d{{0.0}, {1.0}, {1.0}, {4.0}, {9.0}};
  const std::vector<double> unit{1.0, 1.0, 1.0, 1.0, 1.0};
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    const auto a = weighted_kmeans(pts_w, w, 2, seed);
    const auto b = weighted_kmeans(pts_d, unit, 2, seed);
    REQUIRE(a.centroids.size() == b.centroids.size());
    auto key = [](const std::vector<double>& c) { return c[0]; };
    auto ca = a.centroids, cb = b.centroids;
    std::sort(ca.begin(), ca.end(),
              [&](auto& x, auto& y) { return key(x) < key(y); });
    std::sort(cb.begin(), cb.end(),
              [&](auto& x, auto& y) { return key(x) < key(y); });
    for (std::size_t c = 0; c < ca.size(); ++c) {
      CHECK(ca[c][0] == Catch::Approx(cb[c][0]).margin(1e-12));
    }
    CHECK(a.objective == Catch::Approx(b.objective).margin(1e-12));
  }
}

TEST_CASE("weighted kmeans is deterministic and matches brute force on tiny instances",
          "[clustering]") {
  Rng rng(1234);
  int optimal_hits = 0;
  const int n_instances = 50;
  for (int inst = 0; inst < n_instances; ++inst) {
    const std::size_t n = 4 + rng.below(5);  // 4..8 points
    const int k = 2 + static_cast<int>(rng.below(2));  // 2..3
    const std::size_t dim = 1 + rng.below(2);
    std::vector<std::vector<double>> pts(n, std::vector<double>(dim));
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (auto& x : pts[i]) x = rng.uniform01() * 10.0;
      w[i] = 0.5 + rng.uniform01() * 2.0;
    }
    const auto res = weighted_kmeans(pts, w, k, inst);
    const auto rerun = weighted_kmeans(pts, w, k, inst);
    CHECK(res.assignment == rerun.assignment);
    CHECK(res.objective == rerun.objective);
    const double opt = oracle::brute_force_kmeans_objective(pts, w, k);
    CAPTURE(inst, n, k, res.objective, opt);
    // Lloyd never reports an objective below the true optimum.
    CHECK(res.objective >= opt - 1e-9 * std::max(1.0, opt));
    optimal_hits += (res.objective <= opt + 1e-9 * std::max(1.0, opt));
  }
  // With 10 restarts on <= 8 points the optimum is found essentially always.
  CHECK(optimal_hits >= n_instances - 2);
}

TEST_CASE("weighted kmeans argument validation", "[clustering]") {
  const std::vector<std::vector<double>> pts{{0.0}, {1.0}};
  CHECK_THROWS_AS(weighted_kmeans(pts, {1.0, 1.0}, 3, 1), argument_error);
  CHECK_THROWS_AS(weighted_kmeans(pts, {1.0, 1.0}, 0, 1), argument_error);
  CHECK_THROWS_AS(weighted_kmeans(pts, {1.0}, 2, 1), argument_error);
  CHECK_THROWS_AS(weighted_kmeans(pts, {1.0, 0.0}, 2, 1), argument_error);
  CHECK_THROWS_AS(weighted_kmeans({}, {}, 1, 1), argument_error);
  CHECK_THROWS_AS(weighted_kmeans({{0.0}, {1.0, 2.0}}, {1.0, 1.0}, 2, 1),
                  argument_error);
}

namespace {

/// Synthetic per-class scores: classes draw uniformly from [lo, lo + 0.2]
/// where lo depends on the class's latent group.
void fill_two_archetypes(std::vector<double>& scores, std::vector<int>& labels,
                         int n_classes, int per_class, Rng& rng) {
  for (int y = 0; y < n_classes; ++y) {
    const double lo = (y % 2 == 0) ? 0.0 : 0.8;
    for (int i = 0; i < per_class; ++i) {
      scores.push_back(lo + 0.2 * rng.uniform01());
      labels.push_back(y);
    }
  }
}

}  // namespace

TEST_CASE("build_cluster_map examples", "[clustering]") {
  SECTION("all classes below the minimum count give an all-null map") {
    std::vector<double> scores;
    std::vector<int> labels;
    Rng rng(3);
    for (int y = 0; y < 4; ++y) {
      for (int i = 0; i < 5; ++i) {  // 5 < 9
        scores.push_back(rng.uniform01());
        labels.push_back(y);
      }
    }
    const auto map = build_cluster_map(scores, labels, 4, 0.1, 2, 11);
    CHECK(map.n_clusters == 0);
    CHECK(map.null_count() == 4);
    CHECK(map.assignment == std::vector<int>(4, kNullCluster));
  }

  SECTION("M=1 puts every clusterable class in cluster 0") {
    std::vector<double> scores;
    std::vector<int> labels;
    Rng rng(4);
    fill_two_archetypes(scores, labels, 6, 20, rng);
    const auto map = build_cluster_map(scores, labels, 7, 0.1, 1, 11);
    CHECK(map.n_clusters == 1);
    for (int y = 0; y < 6; ++y) CHECK(map.assignment[static_cast<std::size_t>(y)] == 0);
    // Class 6 never appears in the data.
    CHECK(map.assignment[6] == kNullCluster);
  }

  SECTION("requested M is reduced to the clusterable class count") {
    std::vector<double> scores;
    std::vector<int> labels;
    Rng rng(5);
    fill_two_archetypes(scores, labels, 3, 15, rng);
    const auto map = build_cluster_map(scores, labels, 3, 0.1, 10, 11);
    CHECK(map.n_clusters == 3);
    std::vector<int> ids(map.assignment);
    std::sort(ids.begin(), ids.end());
    CHECK(ids == std::vector<int>{0, 1, 2});
  }
}

TEST_CASE("build_cluster_map recovers well-separated archetypes", "[clustering]") {
  std::vector<double> scores;
  std::vector<int> labels;
  Rng rng(6);
  const int n_classes = 20;
  fill_two_archetypes(scores, labels, n_classes, 50, rng);
  const auto map = build_cluster_map(scores, labels, n_classes, 0.1, 2, 17);
  REQUIRE(map.n_clusters == 2);
  const int even_cluster = map.assignment[0];
  const int odd_cluster = map.assignment[1];
  CHECK(even_cluster != odd_cluster);
  for (int y = 0; y < n_classes; ++y) {
    CAPTURE(y);
    CHECK(map.assignment[static_cast<std::size_t>(y)] ==
          (y % 2 == 0 ? even_cluster : odd_cluster));
  }

  // Jointly permuting (scores, labels) leaves the map unchanged.
  std::vector<std::size_t> perm(scores.size());
  std::iota(perm.begin(), perm.end(), 0);
  Rng sh(7);
  sh.shuffle(perm);
  std::vector<double> ps(scores.size());
  std::vector<int> pl(labels.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    ps[i] = scores[perm[i]];
    pl[i] = labels[perm[i]];
  }
  const auto map2 = build_cluster_map(ps, pl, n_classes, 0.1, 2, 17);
  CHECK(map2.assignment == map.assignment);
  CHECK(map2.n_clusters == map.n_clusters);
}

TEST_CASE("tv diagnostic per cluster", "[clustering]") {
  ClusterMap map;
  map.assignment = {0, 0, 1, kNullCluster};
  map.n_clusters = 2;

  SECTION("identical multisets give 0; lone member gives 0") {
    std::vector<double> scores;
    std::vector<int> labels;
    for (double v : {0.1, 0.4, 0.7}) {
      for (int y : {0, 1}) {
        scores.push_back(v);
        labels.push_back(y);
      }
      scores.push_back(v + 0.05);
      labels.push_back(2);
    }
    const auto eps = tv_diagnostic(map, scores, labels);
    REQUIRE(eps.size() == 2);
    CHECK(eps[0] == 0.0);
    CHECK(eps[1] == 0.0);
  }

  SECTION("disjoint supports give 1") {
    std::vector<double> scores{0.1, 0.2, 0.8, 0.9};
    std::vector<int> labels{0, 0, 1, 1};
    const auto eps = tv_diagnostic(map, scores, labels);
    CHECK(eps[0] == 1.0);
  }

  SECTION("same continuous law keeps the diagnostic small") {
    std::vector<double> scores;
    std::vector<int> labels;
    Rng rng(8);
    for (int y : {0, 1}) {
      for (int i = 0; i < 1000; ++i) {
        scores.push_back(rng.uniform01());
        labels.push_back(y);
      }
    }
    const auto eps = tv_diagnostic(map, scores, labels);
    CHECK(eps[0] < 0.1);
  }
}

TEST_CASE("ks statistic agrees with the direct oracle", "[clustering]") {
  CHECK(ks_statistic(std::vector<double>{1, 2, 3}, std::vector<double>{2, 3, 4}) ==
        Catch::Approx(1.0 / 3.0));
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> a(1 + rng.below(30)), b(1 + rng.below(30));
    for (auto& v : a) v = std::floor(rng.uniform01() * 10.0) / 10.0;  // force ties
    for (auto& v : b) v = std::floor(rng.uniform01() * 10.0) / 10.0;
    const double stat = ks_statistic(a, b);
    CHECK(stat == Catch::Approx(oracle::ks_statistic_direct(a, b)).margin(1e-12));
    CHECK(stat >= 0.0);
    CHECK(stat <= 1.0);
  }
}
