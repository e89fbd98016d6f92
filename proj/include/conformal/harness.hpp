#pragma once

// Experiment harness: turns datasets into calibration scores, evaluates
// fitted models over holdouts, and runs multi-repetition sweeps over the
// average class count n_avg. Sweep output is a pure function of (dataset,
// config): repetitions are keyed by derived seeds and results are merged in
// a fixed order, so the CSV is byte-identical across runs and thread
// counts.

#include <atomic>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "conformal/calibrate.hpp"
#include "conformal/common.hpp"
#include "conformal/data.hpp"
#include "conformal/metrics.hpp"
#include "conformal/scores.hpp"

namespace conformal {

/// Aggregate evaluation of one model over one holdout.
struct MetricsReport {
  double cov_gap = 0.0;
  double avg_size = 0.0;
  double frac_under_cov = 0.0;
  double marginal_coverage = 0.0;
  std::vector<double> per_class;  ///< per-class coverage; NaN = class absent
  long long n_eval = 0;
  int n_missing_classes = 0;  ///< classes absent from the holdout (excluded above)
};

namespace detail {

/// Core evaluation loop over candidate-score rows. RowFn(i) must return a
/// span of n_classes scores for holdout example i. Works in one pass; set
/// membership is counted, never materialized.
template <typename RowFn>
MetricsReport evaluate_rows(const CalibratedModel& model, std::size_t n,
                            std::span<const int> labels, RowFn&& row_of) {
  require(n > 0, "evaluation requires a non-empty holdout");
  require(labels.size() == n, "labels must match holdout size");
  const int k = model.n_classes;
  require(static_cast<std::size_t>(k) == model.thresholds.size(),
          "model thresholds length must equal n_classes");

  std::vector<long long> seen(static_cast<std::size_t>(k), 0);
  std::vector<long long> hit(static_cast<std::size_t>(k), 0);
  long long total_hit = 0;
  long long total_size = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::span<const double> row = row_of(i);
    require(row.size() == static_cast<std::size_t>(k),
            "candidate score row length must equal the model's class count");
    const int y = labels[i];
    require(y >= 0 && y < k, "label outside [0, n_classes)");
    long long size_i = 0;
    for (int c = 0; c < k; ++c) {
      size_i += row[static_cast<std::size_t>(c)] <=
                model.thresholds[static_cast<std::size_t>(c)];
    }
    const bool covered = row[static_cast<std::size_t>(y)] <=
                         model.thresholds[static_cast<std::size_t>(y)];
    ++seen[static_cast<std::size_t>(y)];
    hit[static_cast<std::size_t>(y)] += covered;
    total_hit += covered;
    total_size += size_i;
  }

  MetricsReport r;
  r.n_eval = static_cast<long long>(n);
  r.per_class.assign(static_cast<std::size_t>(k), kNaN);
  for (int y = 0; y < k; ++y) {
    const auto yy = static_cast<std::size_t>(y);
    if (seen[yy] > 0) {
      r.per_class[yy] = static_cast<double>(hit[yy]) / static_cast<double>(seen[yy]);
    } else {
      ++r.n_missing_classes;
    }
  }
  r.marginal_coverage = static_cast<double>(total_hit) / static_cast<double>(n);
  r.avg_size = static_cast<double>(total_size) / static_cast<double>(n);
  r.cov_gap = cov_gap(r.per_class, model.alpha);
  r.frac_under_cov = frac_under_cov(r.per_class, model.alpha);
  return r;
}

}  // namespace detail

/// Evaluate a model over a matrix of candidate scores (one row per holdout
/// example, one column per class).
inline MetricsReport evaluate_model(const CalibratedModel& model,
                                    const Matrix& candidate_scores,
                                    std::span<const int> labels) {
  detail::require(candidate_scores.cols == static_cast<std::size_t>(model.n_classes),
                  "candidate score columns must equal the model's class count");
  return detail::evaluate_rows(model, candidate_scores.rows, labels,
                               [&](std::size_t i) { return candidate_scores.row(i); });
}

/// True-label calibration scores for the dataset rows in `indices`.
/// Probability datasets require a score spec (u draws come from the
/// seed's calibration lane); precomputed-score datasets forbid one.
inline LabeledScores calibration_scores(const Dataset& ds,
                                        std::span<const int> indices,
                                        const std::optional<ScoreSpec>& spec,
                                        std::uint64_t seed) {
  LabeledScores out;
  out.n_classes = ds.n_classes();
  out.scores.reserve(indices.size());
  out.labels.reserve(indices.size());
  if (ds.has_scores()) {
    detail::require(!spec.has_value(),
                    "a score function cannot be applied to precomputed scores");
    for (int i : indices) {
      const auto r = static_cast<std::size_t>(i);
      out.scores.push_back(ds.scores.at(r, static_cast<std::size_t>(ds.labels[r])));
      out.labels.push_back(ds.labels[r]);
    }
  } else {
    detail::require(spec.has_value(),
                    "probability datasets require a score function");
    Rng rng(derive_seed(seed, seed_purpose::cal_score));
    for (int i : indices) {
      const auto r = static_cast<std::size_t>(i);
      const double u = spec->kind == ScoreKind::softmax ? 0.0 : rng.uniform01();
      out.scores.push_back(score_label(ds.probs.row(r), ds.labels[r], *spec, u));
      out.labels.push_back(ds.labels[r]);
    }
  }
  out.validate();
  return out;
}

/// Evaluate a model over the dataset rows in `indices`, scoring on the fly
/// (probability datasets) or streaming the stored rows (score datasets).
inline MetricsReport evaluate_holdout(const Dataset& ds,
                                      std::span<const int> indices,
                                      const std::optional<ScoreSpec>& spec,
                                      std::uint64_t seed,
                                      const CalibratedModel& model) {
  detail::require(ds.n_classes() == model.n_classes,
                  "class-count mismatch between model and dataset");
  std::vector<int> labels;
  labels.reserve(indices.size());
  for (int i : indices) labels.push_back(ds.labels[static_cast<std::size_t>(i)]);

  if (ds.has_scores()) {
    detail::require(!spec.has_value(),
                    "a score function cannot be applied to precomputed scores");
    return detail::evaluate_rows(model, indices.size(), labels, [&](std::size_t i) {
      return ds.scores.row(static_cast<std::size_t>(indices[i]));
    });
  }
  detail::require(spec.has_value(), "probability datasets require a score function");
  Rng rng(derive_seed(seed, seed_purpose::eval_score));
  std::vector<double> buf(static_cast<std::size_t>(ds.n_classes()));
  return detail::evaluate_rows(model, indices.size(), labels, [&](std::size_t i) {
    const double u = spec->kind == ScoreKind::softmax ? 0.0 : rng.uniform01();
    score_all_labels(ds.probs.row(static_cast<std::size_t>(indices[i])), *spec, u, buf);
    return std::span<const double>(buf);
  });
}

inline std::string report_to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["covgap"] = r.cov_gap;
  j["avgsize"] = r.avg_size;
  j["fracundercov"] = r.frac_under_cov;
  j["marginal"] = r.marginal_coverage;
  j["n_eval"] = r.n_eval;
  j["n_missing_classes"] = r.n_missing_classes;
  return j.dump(2);
}

/// One calibrator choice inside a sweep.
struct MethodSpec {
  Method method = Method::standard;
  bool randomized = false;
};

inline std::string method_label(const MethodSpec& m) {
  std::string s = to_string(m.method);
  if (m.randomized) s += "-rand";
  return s;
}

/// Full sweep configuration.
struct SweepConfig {
  std::vector<MethodSpec> methods;
  std::vector<ScoreSpec> score_specs;  ///< empty for precomputed-score datasets
  double alpha = 0.1;
  std::vector<int> n_avg_list;
  int n_reps = 10;
  std::uint64_t master_seed = 0;
  int threads = 1;
  std::optional<double> gamma_override;   ///< clustered: bypass auto_tune gamma
  std::optional<int> clusters_override;   ///< clustered: bypass auto_tune M
};

/// Summary of how a clustered fit resolved its tuning.
struct ClusteredFitInfo {
  double gamma = 0.0;
  int n_clusters_requested = 0;  ///< override or auto-tuned M
  int n_clusters = 0;            ///< effective count after any reduction
  bool fallback_to_standard = false;
  int null_classes = 0;
};

/// Fit one method. For clustered methods, gamma/M come from the overrides
/// or auto_tune; an auto-tuned M < 1 falls back to standard behavior (a
/// single threshold over all the data) represented as an all-null clustered
/// model.
inline CalibratedModel fit_method(const MethodSpec& ms, const LabeledScores& data,
                                  double alpha, std::uint64_t seed,
                                  const std::optional<double>& gamma_override,
                                  const std::optional<int>& clusters_override,
                                  ClusteredFitInfo* info = nullptr) {
  switch (ms.method) {
    case Method::standard:
      return ms.randomized ? fit_standard_randomized(data, alpha, seed)
                           : fit_standard(data, alpha);
    case Method::classwise:
      return ms.randomized ? fit_classwise_randomized(data, alpha, seed)
                           : fit_classwise(data, alpha);
    case Method::clustered:
      break;
  }

  double gamma = 0.0;
  int m = 0;
  if (gamma_override && clusters_override) {
    gamma = *gamma_override;
    m = *clusters_override;
  } else {
    const TuneResult tune = auto_tune(data, alpha);
    gamma = gamma_override.value_or(tune.gamma);
    m = clusters_override.value_or(tune.n_clusters);
  }
  // Only an auto-tuned M below 1 triggers the standard fallback; an explicit
  // override must be a valid cluster count.
  const bool fallback = !clusters_override.has_value() && m < 1;
  detail::require(fallback || m >= 1, "clustered fitting requires n_clusters >= 1");

  CalibratedModel model;
  if (fallback) {
    // Too little data to cluster: one pooled threshold over all the data,
    // every class in the null cluster.
    model = ms.randomized ? fit_standard_randomized(data, alpha, seed)
                          : fit_standard(data, alpha);
    model.method = Method::clustered;
    model.seed = seed;
    ClusterMap map;
    map.assignment.assign(static_cast<std::size_t>(data.n_classes), kNullCluster);
    map.n_clusters = 0;
    model.cluster_map = std::move(map);
  } else {
    model = ms.randomized
                ? fit_clustered_randomized(data, alpha, gamma, m, seed)
                : fit_clustered(data, alpha, gamma, m, seed);
  }
  if (info) {
    info->gamma = gamma;
    info->n_clusters_requested = fallback ? 0 : m;
    info->n_clusters = model.cluster_map ? model.cluster_map->n_clusters : 0;
    info->fallback_to_standard = fallback;
    info->null_classes = model.null_class_count();
  }
  return model;
}

/// One per-repetition result row.
struct RepRow {
  std::string method;
  std::string score;
  double alpha = 0.0;
  int n_avg = 0;
  int rep = 0;
  MetricsReport report;
  int n_null_classes = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
};

namespace detail {

inline std::string csv_sanitize(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  }
  return s;
}

inline const char* kRepHeader =
    "method,score,alpha,n_avg,rep,covgap,avgsize,fracundercov,marginal,"
    "n_null_classes,seed,error";

inline void append_rep_row(std::string& out, const RepRow& row) {
  out += row.method;
  out += ',';
  out += row.score;
  out += ',';
  out += format_double(row.alpha);
  out += ',';
  out += std::to_string(row.n_avg);
  out += ',';
  out += std::to_string(row.rep);
  out += ',';
  if (row.ok) {
    out += format_double(row.report.cov_gap);
    out += ',';
    out += format_double(row.report.avg_size);
    out += ',';
    out += format_double(row.report.frac_under_cov);
    out += ',';
    out += format_double(row.report.marginal_coverage);
    out += ',';
    out += std::to_string(row.n_null_classes);
  } else {
    out += ",,,,";
  }
  out += ',';
  out += std::to_string(row.seed);
  out += ',';
  out += csv_sanitize(row.error);
  out += '\n';
}

}  // namespace detail

/// Per-rep and aggregate CSV text produced by one sweep.
struct SweepOutput {
  std::string per_rep_csv;
  std::string aggregate_csv;
  std::vector<RepRow> rows;  ///< in output order
};

/// Run the sweep. For every (n_avg, rep) a calibration set is drawn once
/// (with a seed derived from the master seed) and shared by all methods and
/// scores, mirroring a paired experimental design. Repetitions may run on
/// several threads; output order never depends on scheduling.
inline SweepOutput run_sweep(const Dataset& ds, const SweepConfig& cfg) {
  detail::require(!cfg.methods.empty(), "sweep needs at least one method");
  detail::require(!cfg.n_avg_list.empty(), "sweep needs a non-empty n_avg list");
  detail::require(cfg.n_reps >= 1, "sweep needs n_reps >= 1");
  detail::require_alpha(cfg.alpha);
  detail::require(ds.size() > 0, "sweep needs a non-empty dataset");
  if (ds.has_scores()) {
    detail::require(cfg.score_specs.empty(),
                    "a score function cannot be applied to precomputed scores");
  } else {
    detail::require(!cfg.score_specs.empty(),
                    "probability datasets require at least one score function");
  }
  for (int n_avg : cfg.n_avg_list) {
    detail::require(static_cast<long long>(n_avg) * ds.n_classes() <=
                        static_cast<long long>(ds.size()),
                    "dataset too small for n_avg=" + std::to_string(n_avg));
  }

  // One pseudo-entry for precomputed scores keeps the loops uniform.
  struct ScoreEntry {
    std::optional<ScoreSpec> spec;
    std::string name;
  };
  std::vector<ScoreEntry> score_entries;
  if (ds.has_scores()) {
    score_entries.push_back({std::nullopt, "precomputed"});
  } else {
    for (const auto& s : cfg.score_specs) {
      score_entries.push_back({s, to_string(s.kind)});
    }
  }

  const std::size_t n_a = cfg.n_avg_list.size();
  const auto n_reps = static_cast<std::size_t>(cfg.n_reps);
  const std::size_t n_tasks = n_a * n_reps;
  const std::size_t rows_per_task = score_entries.size() * cfg.methods.size();
  std::vector<RepRow> rows(n_tasks * rows_per_task);

  auto run_task = [&](std::size_t task) {
    const std::size_t a = task / n_reps;
    const std::size_t r = task % n_reps;
    const int n_avg = cfg.n_avg_list[a];
    const std::uint64_t rep_seed = derive_seed(cfg.master_seed, seed_purpose::rep, task);

    auto row_at = [&](std::size_t s, std::size_t m) -> RepRow& {
      return rows[task * rows_per_task + s * cfg.methods.size() + m];
    };
    // Pre-fill identity fields so error paths still emit complete rows.
    for (std::size_t s = 0; s < score_entries.size(); ++s) {
      for (std::size_t m = 0; m < cfg.methods.size(); ++m) {
        RepRow& row = row_at(s, m);
        row.method = method_label(cfg.methods[m]);
        row.score = score_entries[s].name;
        row.alpha = cfg.alpha;
        row.n_avg = n_avg;
        row.rep = static_cast<int>(r);
        row.seed = rep_seed;
      }
    }
    std::vector<int> cal_idx, holdout_idx;
    try {
      auto split = sample_calibration(ds, n_avg, rep_seed);
      cal_idx = std::move(split.first);
      holdout_idx = std::move(split.second);
    } catch (const std::exception& e) {
      for (std::size_t s = 0; s < score_entries.size(); ++s) {
        for (std::size_t m = 0; m < cfg.methods.size(); ++m) {
          row_at(s, m).error = e.what();
        }
      }
      return;
    }
    for (std::size_t s = 0; s < score_entries.size(); ++s) {
      const auto& entry = score_entries[s];
      std::optional<LabeledScores> cal;
      std::string cal_error;
      try {
        cal = calibration_scores(ds, cal_idx, entry.spec, rep_seed);
      } catch (const std::exception& e) {
        cal_error = e.what();
      }
      for (std::size_t m = 0; m < cfg.methods.size(); ++m) {
        RepRow& row = row_at(s, m);
        if (!cal) {
          row.error = cal_error;
          continue;
        }
        try {
          ClusteredFitInfo info;
          const CalibratedModel model =
              fit_method(cfg.methods[m], *cal, cfg.alpha, rep_seed,
                         cfg.gamma_override, cfg.clusters_override, &info);
          row.report = evaluate_holdout(ds, holdout_idx, entry.spec, rep_seed, model);
          row.n_null_classes = model.null_class_count();
          row.ok = true;
        } catch (const std::exception& e) {
          row.error = e.what();
        }
      }
    }
  };

  const int threads = std::max(1, cfg.threads);
  if (threads == 1 || n_tasks <= 1) {
    for (std::size_t t = 0; t < n_tasks; ++t) run_task(t);
  } else {
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
      for (;;) {
        const std::size_t t = next.fetch_add(1);
        if (t >= n_tasks) return;
        run_task(t);
      }
    };
    std::vector<std::thread> pool;
    const std::size_t n_workers =
        std::min<std::size_t>(static_cast<std::size_t>(threads), n_tasks);
    pool.reserve(n_workers);
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  // Emit in (method, score, n_avg, rep) order regardless of how tasks ran.
  SweepOutput out;
  out.per_rep_csv = detail::kRepHeader;
  out.per_rep_csv += '\n';
  out.rows.reserve(rows.size());
  for (std::size_t m = 0; m < cfg.methods.size(); ++m) {
    for (std::size_t s = 0; s < score_entries.size(); ++s) {
      for (std::size_t a = 0; a < n_a; ++a) {
        for (std::size_t r = 0; r < n_reps; ++r) {
          const std::size_t task = a * n_reps + r;
          const RepRow& row = rows[task * rows_per_task + s * cfg.methods.size() + m];
          detail::append_rep_row(out.per_rep_csv, row);
          out.rows.push_back(row);
        }
      }
    }
  }

  // Aggregate: mean and standard error of the mean across the reps of each
  // (method, score, n_avg) cell; a failed rep invalidates its cell.
  out.aggregate_csv =
      "method,score,alpha,n_avg,n_reps,covgap,covgap_se,avgsize,avgsize_se,"
      "fracundercov,fracundercov_se,marginal,marginal_se\n";
  auto mean_se = [&](const std::vector<double>& xs) {
    const auto r = static_cast<double>(xs.size());
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= r;
    if (xs.size() < 2) return std::pair<double, double>(mean, kNaN);
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return std::pair<double, double>(mean, std::sqrt(ss / (r - 1.0)) / std::sqrt(r));
  };
  for (std::size_t m = 0; m < cfg.methods.size(); ++m) {
    for (std::size_t s = 0; s < score_entries.size(); ++s) {
      for (std::size_t a = 0; a < n_a; ++a) {
        std::vector<double> covgap, avgsize, frac, marginal;
        std::string cell_error;
        for (std::size_t r = 0; r < n_reps; ++r) {
          const std::size_t task = a * n_reps + r;
          const RepRow& row = rows[task * rows_per_task + s * cfg.methods.size() + m];
          if (!row.ok) {
            cell_error = row.error;
            break;
          }
          covgap.push_back(row.report.cov_gap);
          avgsize.push_back(row.report.avg_size);
          frac.push_back(row.report.frac_under_cov);
          marginal.push_back(row.report.marginal_coverage);
        }
        std::string& csv = out.aggregate_csv;
        csv += method_label(cfg.methods[m]);
        csv += ',';
        csv += score_entries[s].name;
        csv += ',';
        csv += format_double(cfg.alpha);
        csv += ',';
        csv += std::to_string(cfg.n_avg_list[a]);
        csv += ',';
        csv += std::to_string(cfg.n_reps);
        if (!cell_error.empty()) {
          csv += ",,,,,,,,";
        } else {
          for (const auto& xs : {covgap, avgsize, frac, marginal}) {
            const auto [mean, se] = mean_se(xs);
            csv += ',';
            csv += format_double(mean);
            csv += ',';
            if (!std::isnan(se)) csv += format_double(se);
          }
        }
        csv += '\n';
      }
    }
  }
  return out;
}

}  // namespace conformal
