// Minimal end-to-end tour: generate a synthetic dataset, fit the three
// calibrators on a calibration sample, and compare their per-class coverage
// behaviour on the holdout.

#include <iostream>

#include "conformal/data.hpp"
#include "conformal/harness.hpp"
#include "conformal/model_json.hpp"

int main() {
  using namespace conformal;

  // 40 classes over two score archetypes, ~250 examples per class.
  SyntheticSpec spec;
  spec.n_classes = 40;
  spec.n_archetypes = 2;
  spec.beta_params = {{2.0, 8.0}, {8.0, 2.0}};
  spec.n_examples = 10'000;
  spec.seed = 7;
  const Dataset ds = gen_synthetic(spec);

  // 30 calibration examples per class on average; the rest is holdout.
  const auto [cal_idx, holdout_idx] = sample_calibration(ds, 30, /*seed=*/1);
  const LabeledScores cal = calibration_scores(ds, cal_idx, std::nullopt, 1);

  const double alpha = 0.1;
  for (const MethodSpec ms : {MethodSpec{Method::standard, false},
                              MethodSpec{Method::classwise, false},
                              MethodSpec{Method::clustered, false}}) {
    ClusteredFitInfo info;
    const CalibratedModel model =
        fit_method(ms, cal, alpha, /*seed=*/1, std::nullopt, std::nullopt, &info);
    const MetricsReport r = evaluate_holdout(ds, holdout_idx, std::nullopt, 1, model);
    std::cout << method_label(ms) << ": covgap=" << format_double(r.cov_gap)
              << " avgsize=" << format_double(r.avg_size)
              << " marginal=" << format_double(r.marginal_coverage);
    if (ms.method == Method::clustered) {
      std::cout << " (gamma=" << format_double(info.gamma)
                << ", clusters=" << info.n_clusters << ")";
    }
    std::cout << "\n";
  }

  // Models round-trip through JSON bit-exactly.
  const CalibratedModel m = fit_classwise(cal, alpha);
  std::cout << "round-trip ok: "
            << (model_to_json(model_from_json(model_to_json(m))) == model_to_json(m))
            << "\n";
  return 0;
}
