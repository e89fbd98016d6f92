// Command-line front end: calibrate / evaluate / sweep / synth.
//
// Errors print a single machine-readable "error: ..." line to stderr and
// exit nonzero.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "conformal/data.hpp"
#include "conformal/harness.hpp"
#include "conformal/model_json.hpp"

namespace {

using namespace conformal;

struct DatasetFlags {
  std::string probs;
  std::string scores;
  std::string labels;
  std::string synth_spec;
};

void add_dataset_flags(CLI::App* cmd, DatasetFlags& f) {
  cmd->add_option("--probs", f.probs, "probability matrix CSV (header + rows)");
  cmd->add_option("--scores", f.scores, "precomputed score matrix CSV");
  cmd->add_option("--labels", f.labels, "labels file, one integer per line");
  cmd->add_option("--synth-spec", f.synth_spec, "synthetic dataset spec JSON");
}

Dataset build_dataset(const DatasetFlags& f) {
  const int given = static_cast<int>(!f.probs.empty()) +
                    static_cast<int>(!f.scores.empty()) +
                    static_cast<int>(!f.synth_spec.empty());
  detail::require(given == 1,
                  "exactly one of --probs, --scores, --synth-spec is required");
  if (!f.synth_spec.empty()) {
    detail::require(f.labels.empty(), "--labels cannot be combined with --synth-spec");
    return gen_synthetic(load_synthetic_spec(f.synth_spec));
  }
  detail::require(!f.labels.empty(), "--labels is required with --probs/--scores");
  return load_dataset(f.probs, f.scores, f.labels);
}

MethodSpec parse_method(std::string token) {
  MethodSpec m;
  const auto pos = token.rfind("-rand");
  if (pos != std::string::npos && pos + 5 == token.size()) {
    m.randomized = true;
    token.resize(pos);
  }
  if (token == "standard") {
    m.method = Method::standard;
  } else if (token == "classwise") {
    m.method = Method::classwise;
  } else if (token == "clustered") {
    m.method = Method::clustered;
  } else {
    throw argument_error("unknown method '" + token +
                         "' (expected standard|classwise|clustered, optionally "
                         "with a -rand suffix)");
  }
  return m;
}

ScoreKind parse_score_kind(const std::string& token) {
  if (token == "softmax") return ScoreKind::softmax;
  if (token == "aps") return ScoreKind::aps;
  if (token == "raps") return ScoreKind::raps;
  throw argument_error("unknown score '" + token + "' (expected softmax|aps|raps)");
}

std::optional<ScoreSpec> resolve_score(const Dataset& ds, const std::string& score_flag) {
  if (ds.has_scores()) {
    detail::require(score_flag.empty(),
                    "--score cannot be used with precomputed scores");
    return std::nullopt;
  }
  return ScoreSpec{parse_score_kind(score_flag.empty() ? "softmax" : score_flag)};
}

std::vector<int> all_indices(const Dataset& ds) {
  std::vector<int> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

std::string score_column_name(const Dataset& ds,
                              const std::optional<ScoreSpec>& spec) {
  return ds.has_scores() ? "precomputed" : to_string(spec->kind);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw parse_error(parse_issue::io, "cannot write '" + path + "'");
  out << text;
}

int cmd_calibrate(const DatasetFlags& dsf, const std::string& method_flag,
                  const std::string& score_flag, double alpha,
                  const std::optional<double>& gamma,
                  const std::optional<int>& clusters, bool randomized,
                  std::uint64_t seed, const std::string& out_path) {
  MethodSpec method = parse_method(method_flag);
  if (randomized) method.randomized = true;
  if (method.method != Method::clustered) {
    detail::require(!gamma && !clusters,
                    "--gamma/--clusters apply only to method=clustered");
  }
  const Dataset ds = build_dataset(dsf);
  const auto spec = resolve_score(ds, score_flag);
  const LabeledScores cal = calibration_scores(ds, all_indices(ds), spec, seed);

  ClusteredFitInfo info;
  const CalibratedModel model =
      fit_method(method, cal, alpha, seed, gamma, clusters, &info);
  save_model(out_path, model);

  std::cout << "method=" << method_label(method)
            << " n=" << cal.size() << " n_classes=" << cal.n_classes
            << " alpha=" << format_double(alpha);
  if (method.method == Method::clustered) {
    std::cout << " gamma=" << format_double(info.gamma)
              << " clusters=" << info.n_clusters;
    if (info.n_clusters_requested != info.n_clusters) {
      std::cout << " (requested " << info.n_clusters_requested
                << ", reduced to the clusterable class count)";
    }
    std::cout << " null_classes=" << info.null_classes;
    if (info.fallback_to_standard) {
      std::cout << " (too little data to cluster; standard fallback)";
    }
  }
  std::cout << "\nmodel written to " << out_path << "\n";
  return 0;
}

int cmd_evaluate(const DatasetFlags& dsf, const std::string& model_path,
                 const std::string& score_flag, std::uint64_t seed,
                 const std::string& out_path) {
  const CalibratedModel model = load_model(model_path);
  const Dataset ds = build_dataset(dsf);
  const auto spec = resolve_score(ds, score_flag);
  const MetricsReport report =
      evaluate_holdout(ds, all_indices(ds), spec, seed, model);

  std::string method = to_string(model.method);
  if (model.randomized) method += "-rand";
  std::string csv =
      "method,score,alpha,n_avg,rep,covgap,avgsize,fracundercov,marginal,"
      "n_null_classes,seed\n";
  csv += method + ',' + score_column_name(ds, spec) + ',' +
         format_double(model.alpha) + ",0,0," + format_double(report.cov_gap) +
         ',' + format_double(report.avg_size) + ',' +
         format_double(report.frac_under_cov) + ',' +
         format_double(report.marginal_coverage) + ',' +
         std::to_string(model.null_class_count()) + ',' + std::to_string(seed) +
         '\n';
  if (!out_path.empty()) write_text(out_path, csv);
  std::cout << report_to_json(report) << "\n";
  if (report.n_missing_classes > 0) {
    std::cerr << "warning: " << report.n_missing_classes
              << " classes absent from the evaluation set were excluded from "
                 "covgap/fracundercov\n";
  }
  if (!out_path.empty()) std::cout << "metrics written to " << out_path << "\n";
  return 0;
}

int cmd_sweep(const DatasetFlags& dsf, const std::vector<std::string>& method_flags,
              const std::vector<std::string>& score_flags, double alpha,
              const std::vector<int>& n_avg_list, int reps, std::uint64_t seed,
              const std::optional<double>& gamma, const std::optional<int>& clusters,
              bool randomized, int threads, const std::string& out_path) {
  const Dataset ds = build_dataset(dsf);

  SweepConfig cfg;
  std::vector<std::string> methods = method_flags;
  if (methods.empty()) methods = {"standard", "classwise", "clustered"};
  for (const auto& t : methods) {
    MethodSpec m = parse_method(t);
    if (randomized) m.randomized = true;
    cfg.methods.push_back(m);
  }
  if (ds.has_scores()) {
    detail::require(score_flags.empty(),
                    "--score cannot be used with precomputed scores");
  } else {
    std::vector<std::string> scores = score_flags;
    if (scores.empty()) scores = {"softmax"};
    for (const auto& t : scores) cfg.score_specs.push_back(ScoreSpec{parse_score_kind(t)});
  }
  cfg.alpha = alpha;
  cfg.n_avg_list = n_avg_list;
  cfg.n_reps = reps;
  cfg.master_seed = seed;
  cfg.threads = threads;
  cfg.gamma_override = gamma;
  cfg.clusters_override = clusters;

  const SweepOutput out = run_sweep(ds, cfg);

  std::filesystem::path agg_path(out_path);
  std::filesystem::path rep_path = agg_path;
  rep_path.replace_filename(agg_path.stem().string() + "_reps" +
                            agg_path.extension().string());
  write_text(agg_path.string(), out.aggregate_csv);
  write_text(rep_path.string(), out.per_rep_csv);

  std::size_t failures = 0;
  for (const auto& r : out.rows) failures += !r.ok;
  std::cout << "sweep complete: " << out.rows.size() << " rows ("
            << failures << " failed)\naggregate written to " << agg_path.string()
            << "\nper-rep rows written to " << rep_path.string() << "\n";
  return failures == 0 ? 0 : 1;
}

int cmd_synth(const std::string& spec_path, const std::string& out_prefix) {
  const SyntheticSpec spec = load_synthetic_spec(spec_path);
  const Dataset ds = gen_synthetic(spec);
  const std::string scores_path = out_prefix + ".scores.csv";
  const std::string labels_path = out_prefix + ".labels.csv";
  save_matrix_csv(scores_path, ds.scores);
  save_labels(labels_path, ds.labels);
  std::cout << "synthetic dataset: n=" << ds.size()
            << " n_classes=" << ds.n_classes()
            << " archetypes=" << spec.n_archetypes << "\nscores written to "
            << scores_path << "\nlabels written to " << labels_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conformal prediction sets with marginal, class-conditional, "
               "or cluster-conditional coverage"};
  app.require_subcommand(1);

  // --- calibrate ---
  auto* cal = app.add_subcommand("calibrate", "fit a model and write it as JSON");
  DatasetFlags cal_ds;
  add_dataset_flags(cal, cal_ds);
  std::string cal_method = "standard", cal_score, cal_out = "model.json";
  double cal_alpha = 0.1;
  bool cal_rand = false;
  std::uint64_t cal_seed = 0;
  std::optional<double> cal_gamma;
  std::optional<int> cal_clusters;
  double cal_gamma_raw = -1.0;
  int cal_clusters_raw = -1;
  cal->add_option("--method", cal_method, "standard|classwise|clustered[-rand]");
  cal->add_option("--score", cal_score, "softmax|aps|raps (probability inputs only)");
  cal->add_option("--alpha", cal_alpha, "miscoverage level in (0,1)");
  auto* cal_gamma_opt = cal->add_option("--gamma", cal_gamma_raw,
                                        "clustering split fraction override");
  auto* cal_clusters_opt =
      cal->add_option("--clusters", cal_clusters_raw, "cluster count override");
  cal->add_flag("--randomized", cal_rand, "use exact-coverage randomized thresholds");
  cal->add_option("--seed", cal_seed, "seed for splits/draws");
  cal->add_option("--out", cal_out, "output model path");

  // --- evaluate ---
  auto* ev = app.add_subcommand("evaluate", "evaluate a model over a holdout");
  DatasetFlags ev_ds;
  add_dataset_flags(ev, ev_ds);
  std::string ev_model, ev_score, ev_out;
  std::uint64_t ev_seed = 0;
  ev->add_option("--model", ev_model, "model JSON path")->required();
  ev->add_option("--score", ev_score, "softmax|aps|raps (probability inputs only)");
  ev->add_option("--seed", ev_seed, "seed for score randomisation draws");
  ev->add_option("--out", ev_out, "metrics CSV path");

  // --- sweep ---
  auto* sw = app.add_subcommand("sweep", "multi-repetition n_avg sweep");
  DatasetFlags sw_ds;
  add_dataset_flags(sw, sw_ds);
  std::vector<std::string> sw_methods, sw_scores;
  std::vector<int> sw_navg;
  double sw_alpha = 0.1;
  int sw_reps = 10;
  int sw_threads = std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
  bool sw_rand = false;
  std::uint64_t sw_seed = 0;
  std::string sw_out = "sweep.csv";
  double sw_gamma_raw = -1.0;
  int sw_clusters_raw = -1;
  sw->add_option("--method", sw_methods,
                 "methods to run (default: standard classwise clustered)");
  sw->add_option("--score", sw_scores, "score functions (probability inputs only)");
  sw->add_option("--alpha", sw_alpha, "miscoverage level in (0,1)");
  sw->add_option("--navg", sw_navg, "average per-class calibration counts")->required();
  sw->add_option("--reps", sw_reps, "repetitions per cell");
  sw->add_option("--seed", sw_seed, "master seed");
  auto* sw_gamma_opt =
      sw->add_option("--gamma", sw_gamma_raw, "clustering split fraction override");
  auto* sw_clusters_opt =
      sw->add_option("--clusters", sw_clusters_raw, "cluster count override");
  sw->add_flag("--randomized", sw_rand, "randomize all listed methods");
  sw->add_option("--threads", sw_threads, "worker threads for repetitions");
  sw->add_option("--out", sw_out, "aggregate CSV path (per-rep rows go to *_reps)");

  // --- synth ---
  auto* sy = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string sy_spec, sy_out = "synthetic";
  sy->add_option("--synth-spec", sy_spec, "synthetic dataset spec JSON")->required();
  sy->add_option("--out", sy_out, "output path prefix");

  CLI11_PARSE(app, argc, argv);

  try {
    if (cal->parsed()) {
      if (*cal_gamma_opt) cal_gamma = cal_gamma_raw;
      if (*cal_clusters_opt) cal_clusters = cal_clusters_raw;
      return cmd_calibrate(cal_ds, cal_method, cal_score, cal_alpha, cal_gamma,
                           cal_clusters, cal_rand, cal_seed, cal_out);
    }
    if (ev->parsed()) {
      return cmd_evaluate(ev_ds, ev_model, ev_score, ev_seed, ev_out);
    }
    if (sw->parsed()) {
      std::optional<double> sw_gamma;
      std::optional<int> sw_clusters;
      if (*sw_gamma_opt) sw_gamma = sw_gamma_raw;
      if (*sw_clusters_opt) sw_clusters = sw_clusters_raw;
      return cmd_sweep(sw_ds, sw_methods, sw_scores, sw_alpha, sw_navg, sw_reps,
                       sw_seed, sw_gamma, sw_clusters, sw_rand, sw_threads, sw_out);
    }
    if (sy->parsed()) {
      return cmd_synth(sy_spec, sy_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
