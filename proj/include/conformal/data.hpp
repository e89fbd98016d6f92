#pragma once

// Dataset ingestion and synthesis. Matrices travel as CSV with a header row
// (class names or c0..c{K-1}); labels as one integer per line. Synthetic
// datasets carry score rows directly: the true-label column is drawn from
// the class's archetype Beta distribution and every other column from a
// fixed distribution shifted toward 1, so prediction sets stay small but
// nontrivial.

#include <array>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "conformal/common.hpp"
#include "conformal/random.hpp"
#include "conformal/scores.hpp"

namespace conformal {

/// An evaluation-ready dataset: probability rows or precomputed score rows
/// (never both), labels, and (for synthetic data) the oracle class ->
/// archetype assignment.
struct Dataset {
  Matrix probs;
  Matrix scores;
  std::vector<int> labels;
  std::vector<std::string> class_names;
  std::vector<int> latent_clusters;  ///< per-class oracle archetype (synthetic only)

  bool has_probs() const { return probs.cols > 0; }
  bool has_scores() const { return scores.cols > 0; }
  int n_classes() const {
    return static_cast<int>(probs.cols > 0 ? probs.cols : scores.cols);
  }
  std::size_t size() const { return labels.size(); }
  const Matrix& matrix() const { return probs.cols > 0 ? probs : scores; }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_cell(const std::string& cell, std::size_t line, std::size_t col) {
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  while (first < last && (*first == ' ' || *first == '\t')) ++first;
  while (last > first && (last[-1] == ' ' || last[-1] == '\t')) --last;
  double v = 0.0;
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc{} || res.ptr != last || first == last) {
    throw parse_error(parse_issue::bad_cell,
                      "non-numeric cell '" + cell + "'", line, col);
  }
  return v;
}

inline std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace detail

/// Load a matrix CSV (header + numeric rows). Column names come back via
/// `names`.
inline Matrix load_matrix_csv(const std::string& path,
                              std::vector<std::string>* names = nullptr) {
  std::ifstream in(path);
  if (!in) throw parse_error(parse_issue::io, "cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) {
    throw parse_error(parse_issue::io, "empty file '" + path + "'");
  }
  const auto header = detail::split_csv_line(detail::strip_cr(line));
  const std::size_t cols = header.size();
  if (cols == 0) throw parse_error(parse_issue::io, "empty header in '" + path + "'");
  if (names) *names = header;

  Matrix m;
  m.cols = cols;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::strip_cr(line);
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != cols) {
      throw parse_error(parse_issue::shape,
                        "row has " + std::to_string(cells.size()) +
                            " fields, expected " + std::to_string(cols),
                        line_no);
    }
    for (std::size_t c = 0; c < cols; ++c) {
      m.data.push_back(detail::parse_cell(cells[c], line_no, c + 1));
    }
    ++m.rows;
  }
  return m;
}

/// Load labels (one integer per line) and range-check against n_classes.
inline std::vector<int> load_labels(const std::string& path, int n_classes) {
  std::ifstream in(path);
  if (!in) throw parse_error(parse_issue::io, "cannot open '" + path + "'");
  std::vector<int> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::strip_cr(line);
    if (line.empty()) continue;
    const char* first = line.data();
    const char* last = line.data() + line.size();
    while (first < last && (*first == ' ' || *first == '\t')) ++first;
    while (last > first && (last[-1] == ' ' || last[-1] == '\t')) --last;
    int v = 0;
    const auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc{} || res.ptr != last || first == last) {
      throw parse_error(parse_issue::bad_cell, "non-integer label '" + line + "'",
                        line_no, 1);
    }
    if (v < 0 || v >= n_classes) {
      throw parse_error(parse_issue::label_range,
                        "label " + std::to_string(v) + " outside [0, " +
                            std::to_string(n_classes) + ")",
                        line_no, 1);
    }
    labels.push_back(v);
  }
  return labels;
}

/// Load a full dataset. Exactly one of probs_path/scores_path must be
/// non-empty; probability rows are validated and renormalized in place.
inline Dataset load_dataset(const std::string& probs_path,
                            const std::string& scores_path,
                            const std::string& labels_path) {
  detail::require(probs_path.empty() != scores_path.empty(),
                  "exactly one of probabilities/scores must be given");
  Dataset d;
  const bool is_probs = !probs_path.empty();
  Matrix m = load_matrix_csv(is_probs ? probs_path : scores_path, &d.class_names);
  if (is_probs) {
    for (std::size_t r = 0; r < m.rows; ++r) {
      try {
        validate_probability_row(m.row(r));
      } catch (const argument_error& e) {
        // +2: 1-based lines, header first.
        throw parse_error(parse_issue::row_sum, std::string(e.what()), r + 2);
      }
    }
    d.probs = std::move(m);
  } else {
    d.scores = std::move(m);
  }
  d.labels = load_labels(labels_path, d.n_classes());
  if (d.labels.size() != d.matrix().rows) {
    throw parse_error(parse_issue::shape,
                      "label count (" + std::to_string(d.labels.size()) +
                          ") does not match matrix rows (" +
                          std::to_string(d.matrix().rows) + ")");
  }
  return d;
}

/// Shortest decimal form that parses back to exactly the same double.
inline std::string format_double(double v) {
  std::array<char, 40> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

inline void save_matrix_csv(const std::string& path, const Matrix& m,
                            const std::vector<std::string>& names = {}) {
  detail::require(names.empty() || names.size() == m.cols,
                  "header name count must match matrix columns");
  std::ofstream out(path);
  if (!out) throw parse_error(parse_issue::io, "cannot write '" + path + "'");
  for (std::size_t c = 0; c < m.cols; ++c) {
    if (c) out << ',';
    if (names.empty()) {
      out << 'c' << c;
    } else {
      out << names[c];
    }
  }
  out << '\n';
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) {
      if (c) out << ',';
      out << format_double(m.at(r, c));
    }
    out << '\n';
  }
}

inline void save_labels(const std::string& path, std::span<const int> labels) {
  std::ofstream out(path);
  if (!out) throw parse_error(parse_issue::io, "cannot write '" + path + "'");
  for (int y : labels) out << y << '\n';
}

/// Synthetic dataset description. Classes take archetypes round-robin;
/// archetype h draws true-label scores from Beta(beta_params[h]).
struct SyntheticSpec {
  int n_classes = 0;
  int n_archetypes = 0;
  std::vector<std::array<double, 2>> beta_params;
  bool zipf = false;        ///< class frequencies: uniform or Zipf(zipf_s)
  double zipf_s = 1.0;
  long long n_examples = 0;
  std::uint64_t seed = 0;

  void validate() const {
    detail::require(n_classes >= 1, "synthetic spec: n_classes must be >= 1");
    detail::require(n_archetypes >= 1 && n_archetypes <= n_classes,
                    "synthetic spec: need 1 <= n_archetypes <= n_classes");
    detail::require(beta_params.size() == static_cast<std::size_t>(n_archetypes),
                    "synthetic spec: beta_params must list one (a,b) per archetype");
    for (const auto& p : beta_params) {
      detail::require(p[0] > 0.0 && p[1] > 0.0,
                      "synthetic spec: Beta shapes must be positive");
    }
    detail::require(n_examples >= 0, "synthetic spec: n_examples must be >= 0");
    if (zipf) detail::require(zipf_s > 0.0, "synthetic spec: zipf exponent must be positive");
  }
};

/// Shape of the distractor distribution for non-true-label scores: shifted
/// toward 1 so prediction sets stay small at typical thresholds.
inline constexpr double kDistractorBetaA = 8.0;
inline constexpr double kDistractorBetaB = 2.0;

/// Parse a SyntheticSpec from its JSON form:
///   {n_classes, n_archetypes, beta_params:[[a,b],...],
///    freq:"uniform"|{"zipf":s}, n_examples, seed}
inline SyntheticSpec parse_synthetic_spec(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(parse_issue::bad_cell,
                      std::string("synthetic spec is not valid JSON: ") + e.what());
  }
  SyntheticSpec spec;
  try {
    spec.n_classes = j.at("n_classes").get<int>();
    spec.n_archetypes = j.at("n_archetypes").get<int>();
    for (const auto& pair : j.at("beta_params")) {
      spec.beta_params.push_back({pair.at(0).get<double>(), pair.at(1).get<double>()});
    }
    const auto& freq = j.at("freq");
    if (freq.is_string()) {
      detail::require(freq.get<std::string>() == "uniform",
                      "synthetic spec: freq must be \"uniform\" or {\"zipf\": s}");
    } else {
      spec.zipf = true;
      spec.zipf_s = freq.at("zipf").get<double>();
    }
    spec.n_examples = j.at("n_examples").get<long long>();
    spec.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(parse_issue::schema,
                      std::string("synthetic spec field error: ") + e.what());
  }
  spec.validate();
  return spec;
}

inline SyntheticSpec load_synthetic_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw parse_error(parse_issue::io, "cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_synthetic_spec(ss.str());
}

/// Generate a synthetic scores dataset. Byte-identical for equal specs.
inline Dataset gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Dataset d;
  d.latent_clusters.resize(static_cast<std::size_t>(spec.n_classes));
  for (int y = 0; y < spec.n_classes; ++y) {
    d.latent_clusters[static_cast<std::size_t>(y)] = y % spec.n_archetypes;
  }

  // Class-frequency law (cumulative weights for inverse-CDF sampling).
  std::vector<double> cum(static_cast<std::size_t>(spec.n_classes));
  {
    double total = 0.0;
    for (int y = 0; y < spec.n_classes; ++y) {
      const double w =
          spec.zipf ? 1.0 / std::pow(static_cast<double>(y + 1), spec.zipf_s) : 1.0;
      total += w;
      cum[static_cast<std::size_t>(y)] = total;
    }
    for (double& c : cum) c /= total;
    cum.back() = 1.0;
  }

  Rng rng(derive_seed(spec.seed, seed_purpose::synth));
  const auto n = static_cast<std::size_t>(spec.n_examples);
  d.scores = Matrix(n, static_cast<std::size_t>(spec.n_classes));
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform01();
    const int y = static_cast<int>(
        std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
    d.labels[i] = y;
    const auto& ap = spec.beta_params[static_cast<std::size_t>(
        d.latent_clusters[static_cast<std::size_t>(y)])];
    auto row = d.scores.row(i);
    for (int c = 0; c < spec.n_classes; ++c) {
      row[static_cast<std::size_t>(c)] =
          c == y ? rng.beta(ap[0], ap[1])
                 : rng.beta(kDistractorBetaA, kDistractorBetaB);
    }
  }
  return d;
}

/// Sample a calibration set of n_avg * n_classes indices without
/// replacement; the remainder (possibly empty) is the holdout. Both index
/// lists come back sorted ascending.
inline std::pair<std::vector<int>, std::vector<int>> sample_calibration(
    const Dataset& dataset, int n_avg, std::uint64_t seed) {
  detail::require(n_avg >= 1, "n_avg must be >= 1");
  const auto n = static_cast<long long>(dataset.size());
  const long long want = static_cast<long long>(n_avg) * dataset.n_classes();
  detail::require(want <= n,
                  "dataset too small: need " + std::to_string(want) +
                      " calibration examples but only " + std::to_string(n) +
                      " are available");
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, seed_purpose::sample));
  rng.shuffle(idx);
  std::vector<int> cal(idx.begin(), idx.begin() + want);
  std::vector<int> holdout(idx.begin() + want, idx.end());
  std::sort(cal.begin(), cal.end());
  std::sort(holdout.begin(), holdout.end());
  return {std::move(cal), std::move(holdout)};
}

}  // namespace conformal
