#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "conformal/metrics.hpp"
#include "conformal/random.hpp"
#include "oracles.hpp"

using namespace conformal;

TEST_CASE("per-class coverage counting", "[metrics]") {
  const std::vector<std::vector<int>> full{{0, 1, 2}, {0, 1, 2}, {0, 1, 2}};
  const std::vector<int> labels{0, 1, 2};
  CHECK(per_class_coverage(full, labels, 3) == std::vector<double>{1.0, 1.0, 1.0});

  const std::vector<std::vector<int>> none{{}, {}, {}};
  CHECK(per_class_coverage(none, labels, 3) == std::vector<double>{0.0, 0.0, 0.0});

  // Counts per class: 2/2, 1/2, 0/1.
  const std::vector<std::vector<int>> sets{{0}, {0, 2}, {1}, {0}, {1, 0}};
  const std::vector<int> lab{0, 0, 1, 1, 2};
  const auto cov = per_class_coverage(sets, lab, 4);
  CHECK(cov[0] == 1.0);
  CHECK(cov[1] == 0.5);
  CHECK(cov[2] == 0.0);
  CHECK(std::isnan(cov[3]));  // class 3 absent from the evaluation set

  CHECK_THROWS_AS(per_class_coverage(sets, labels, 3), argument_error);
  CHECK_THROWS_AS(per_class_coverage(none, std::vector<int>{0, 1, 5}, 3),
                  argument_error);
}

TEST_CASE("cov_gap arithmetic", "[metrics]") {
  CHECK(cov_gap(std::vector<double>{0.9, 0.9, 0.9}, 0.1) == 0.0);
  CHECK(cov_gap(std::vector<double>{1.0, 0.8}, 0.1) ==
        Catch::Approx(10.0).margin(1e-12));
  CHECK(cov_gap(std::vector<double>{0.508, 0.992}, 0.1) ==
        Catch::Approx(24.2).margin(1e-12));

  // NaN classes are excluded.
  CHECK(cov_gap(std::vector<double>{0.9, kNaN}, 0.1) == 0.0);
  CHECK_THROWS_AS(cov_gap(std::vector<double>{kNaN}, 0.1), argument_error);
  CHECK_THROWS_AS(cov_gap(std::vector<double>{}, 0.1), argument_error);

  // Relabeling invariance and linear scaling in the deviations.
  Rng rng(41);
  std::vector<double> dev(8);
  for (auto& d : dev) d = (rng.uniform01() - 0.5) * 0.2;
  std::vector<double> c1(8), c2(8);
  for (std::size_t i = 0; i < 8; ++i) {
    c1[i] = 0.9 + dev[i];
    c2[i] = 0.9 + 2.0 * dev[i];
  }
  const double g1 = cov_gap(c1, 0.1);
  std::vector<double> shuffled = c1;
  rng.shuffle(shuffled);
  CHECK(cov_gap(shuffled, 0.1) == Catch::Approx(g1).margin(1e-12));
  CHECK(cov_gap(c2, 0.1) == Catch::Approx(2.0 * g1).margin(1e-12));
}

TEST_CASE("avg_size arithmetic", "[metrics]") {
  CHECK(avg_size({{0}, {3}, {2}}) == 1.0);
  CHECK(avg_size({{0, 1, 2, 3, 4}, {0, 1, 2, 3, 4}}) == 5.0);
  CHECK(avg_size({{0}, {0, 1, 2}, {1, 2}}) == 2.0);
  CHECK_THROWS_AS(avg_size({}), argument_error);
}

TEST_CASE("frac_under_cov boundary and monotonicity", "[metrics]") {
  CHECK(frac_under_cov(std::vector<double>{0.79, 0.81}, 0.1) == 0.5);
  CHECK(frac_under_cov(std::vector<double>{1.0, 1.0, 1.0}, 0.1) == 0.0);
  // The 10-point cutoff is inclusive.
  CHECK(frac_under_cov(std::vector<double>{0.80}, 0.1) == 1.0);
  CHECK(frac_under_cov(std::vector<double>{0.9, kNaN, 0.1}, 0.1) == 0.5);
  CHECK_THROWS_AS(frac_under_cov(std::vector<double>{}, 0.1), argument_error);

  Rng rng(42);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<double> c(10), higher(10);
    for (std::size_t i = 0; i < c.size(); ++i) {
      c[i] = rng.uniform01();
      higher[i] = std::min(1.0, c[i] + rng.uniform01() * 0.3);
    }
    CHECK(frac_under_cov(higher, 0.1) <= frac_under_cov(c, 0.1));
  }
}

TEST_CASE("beta coverage law examples", "[metrics]") {
  const auto law10 = beta_coverage_law(10, 0.1);
  REQUIRE(law10.has_value());
  CHECK(law10->a == 10);
  CHECK(law10->b == 1);
  CHECK(law10->tail_prob(0.8) ==
        Catch::Approx(std::pow(0.8, 10)).epsilon(1e-9));
  CHECK(law10->tail_prob(0.8) == Catch::Approx(0.1074).margin(5e-4));
  CHECK(law10->mean() == Catch::Approx(10.0 / 11.0));
  CHECK(law10->mean() >= 0.9);

  const auto law98 = beta_coverage_law(98, 0.1);
  REQUIRE(law98.has_value());
  CHECK(law98->a == 90);
  CHECK(law98->b == 9);
  CHECK(law98->variance() == Catch::Approx(810.0 / 980100.0));
  // The rule-of-thumb approximation alpha*(1-alpha)/(n+2).
  CHECK(law98->variance() == Catch::Approx(0.0009).margin(1.5e-4));

  // Too few examples for a finite threshold: coverage is constantly 1, the
  // Beta law does not apply.
  CHECK_FALSE(beta_coverage_law(5, 0.1).has_value());
  CHECK(beta_coverage_law(9, 0.1).has_value());
  CHECK_THROWS_AS(beta_coverage_law(0, 0.1), argument_error);
}

TEST_CASE("incomplete beta agrees with the exact binomial summation",
          "[metrics]") {
  for (long long a : {1, 2, 5, 10, 40, 90}) {
    for (long long b : {1, 2, 5, 9, 30}) {
      for (double x : {0.01, 0.2, 0.5, 0.8, 0.9, 0.99}) {
        const double got = regularized_incomplete_beta(
            static_cast<double>(a), static_cast<double>(b), x);
        const double want = static_cast<double>(
            oracle::ibeta_binomial_sum(static_cast<int>(a), static_cast<int>(b),
                                       static_cast<long double>(x)));
        CAPTURE(a, b, x);
        CHECK(got == Catch::Approx(want).epsilon(1e-8).margin(1e-12));
      }
    }
  }
  CHECK(regularized_incomplete_beta(3.0, 4.0, 0.0) == 0.0);
  CHECK(regularized_incomplete_beta(3.0, 4.0, 1.0) == 1.0);
  CHECK_THROWS_AS(regularized_incomplete_beta(0.0, 1.0, 0.5), argument_error);

  // Monotone in x.
  double prev = -1.0;
  for (double x = 0.0; x <= 1.0; x += 0.05) {
    const double v = regularized_incomplete_beta(7.0, 3.0, x);
    CHECK(v >= prev);
    prev = v;
  }
}

TEST_CASE("tail_prob matches classwise coverage simulation", "[metrics]") {
  // Class-conditional coverage of a classwise calibrator with n continuous
  // scores is Beta(k, n+1-k); check the CDF at a few points by Monte-Carlo.
  const long long n = 20;
  const double alpha = 0.1;
  const auto law = beta_coverage_law(n, alpha);
  REQUIRE(law.has_value());
  const int n_trials = 10000;
  Rng rng(43);
  std::vector<double> scores(static_cast<std::size_t>(n));
  int below_085 = 0, below_095 = 0;
  for (int t = 0; t < n_trials; ++t) {
    for (auto& s : scores) s = rng.uniform01();
    const double q = conformal_quantile(scores, alpha);
    // True coverage of threshold q for U(0,1) test scores is q itself.
    below_085 += (q < 0.85);
    below_095 += (q < 0.95);
  }
  const auto frac = [&](int c) { return static_cast<double>(c) / n_trials; };
  const auto se = [&](double p) {
    return std::sqrt(p * (1.0 - p) / n_trials);
  };
  const double p085 = law->tail_prob(0.85);
  const double p095 = law->tail_prob(0.95);
  CHECK(frac(below_085) == Catch::Approx(p085).margin(3.0 * se(p085) + 1e-9));
  CHECK(frac(below_095) == Catch::Approx(p095).margin(3.0 * se(p095) + 1e-9));
}

TEST_CASE("marginal coverage recombines from per-class coverage", "[metrics]") {
  Rng rng(44);
  const int n_classes = 7;
  std::vector<std::vector<int>> sets;
  std::vector<int> labels;
  for (int i = 0; i < 500; ++i) {
    const int y = static_cast<int>(rng.below(n_classes));
    labels.push_back(y);
    std::vector<int> s;
    for (int c = 0; c < n_classes; ++c) {
      if (rng.uniform01() < 0.6) s.push_back(c);
    }
    sets.push_back(std::move(s));
  }
  long long hits = 0;
  std::vector<long long> count(n_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ++count[static_cast<std::size_t>(labels[i])];
    const auto& s = sets[i];
    hits += std::find(s.begin(), s.end(), labels[i]) != s.end();
  }
  const double marginal = static_cast<double>(hits) / static_cast<double>(labels.size());
  const auto cov = per_class_coverage(sets, labels, n_classes);
  double recombined = 0.0;
  for (int y = 0; y < n_classes; ++y) {
    recombined += cov[static_cast<std::size_t>(y)] *
                  static_cast<double>(count[static_cast<std::size_t>(y)]) /
                  static_cast<double>(labels.size());
  }
  CHECK(recombined == Catch::Approx(marginal).margin(1e-12));
}

TEST_CASE("class balance", "[metrics]") {
  // Perfectly uniform labels over 20 classes.
  std::vector<int> uniform;
  for (int rep = 0; rep < 10; ++rep) {
    for (int y = 0; y < 20; ++y) uniform.push_back(y);
  }
  CHECK(class_balance(uniform, 20) == 1.0);

  // One empty class among 20: the rarest-5% bucket is exactly that class.
  std::vector<int> gap;
  for (int rep = 0; rep < 10; ++rep) {
    for (int y = 0; y < 19; ++y) gap.push_back(y);
  }
  CHECK(class_balance(gap, 20) == 0.0);

  // Zipf(1) over 100 classes, N=10000: heavy head, starving tail. Class
  // counts follow the law exactly (largest-remainder apportionment) so the
  // check is noise-free.
  const int n_classes = 100;
  const int n_total = 10000;
  double harmonic = 0.0;
  for (int y = 1; y <= n_classes; ++y) harmonic += 1.0 / y;
  std::vector<long long> zc(n_classes);
  std::vector<std::pair<double, int>> remainder;
  long long assigned = 0;
  for (int y = 0; y < n_classes; ++y) {
    const double ideal = n_total / (static_cast<double>(y + 1) * harmonic);
    zc[static_cast<std::size_t>(y)] = static_cast<long long>(ideal);
    assigned += zc[static_cast<std::size_t>(y)];
    remainder.push_back({ideal - std::floor(ideal), y});
  }
  std::sort(remainder.rbegin(), remainder.rend());
  for (long long i = 0; i < n_total - assigned; ++i) {
    ++zc[static_cast<std::size_t>(remainder[static_cast<std::size_t>(i)].second)];
  }
  std::vector<int> zipf;
  for (int y = 0; y < n_classes; ++y) {
    zipf.insert(zipf.end(), static_cast<std::size_t>(zc[static_cast<std::size_t>(y)]), y);
  }
  REQUIRE(zipf.size() == static_cast<std::size_t>(n_total));
  const double bal = class_balance(zipf, n_classes);
  // Direct counting oracle: mass of the 5 rarest classes vs 5 * N/100.
  std::vector<long long> counts(n_classes, 0);
  for (int y : zipf) ++counts[static_cast<std::size_t>(y)];
  std::sort(counts.begin(), counts.end());
  const long long rare = counts[0] + counts[1] + counts[2] + counts[3] + counts[4];
  CHECK(bal == Catch::Approx(static_cast<double>(rare) / (5.0 * 100.0)).margin(1e-12));
  CHECK(bal < 0.2);

  CHECK_THROWS_AS(class_balance(std::vector<int>{}, 10), argument_error);
}
