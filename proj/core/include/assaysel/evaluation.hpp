#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "assaysel/core_data.hpp"
#include "assaysel/finetune.hpp"
#include "assaysel/predictor.hpp"
#include "assaysel/selection.hpp"

namespace assaysel {

/// One train/test partition of a collection. Whole description groups go to
/// one side; `sampled_test` is the subset of test assays actually evaluated.
struct SplitSpec {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  std::vector<std::string> sampled_test;
  // Measurement share of the test side.
  double test_share = 0.0;
};

struct SplitConfig {
  double test_fraction = 0.1;
  std::size_t n_test_assays = 10;
};

// Groups are visited in a seeded order and moved to the test side whenever
// that brings the test share closer to `test_fraction`. Needs at least two
// description groups.
std::vector<SplitSpec> make_splits(const AssayCollection& collection, std::size_t n_splits,
                                   std::uint64_t seed, const SplitConfig& config = {});

// Throws DataError(kSplitLeak) if a description group straddles the split.
void check_split(const AssayCollection& collection, const SplitSpec& split);

// P(score of a random positive > score of a random negative), ties counting
// one half. nullopt when either class is absent.
std::optional<double> auroc(std::span<const int> labels, std::span<const double> scores);

struct CurvePoint {
  double fraction = 0.0;
  // AUROC x 100; nullopt marks an undefined cell.
  std::optional<double> auroc;
  // Mean training-set size over the evaluated test assays.
  double train_measurements = 0.0;
};

struct CurveMeta {
  std::string target_id;
  std::string strategy;
  std::size_t split = 0;
  std::size_t run = 0;
  std::string architecture;
  std::uint64_t split_seed = 0;
  std::uint64_t run_seed = 0;
};

struct LearningCurve {
  CurveMeta meta;
  std::vector<CurvePoint> points;
  std::vector<std::string> warnings;
};

inline std::vector<double> default_fractions() {
  return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
}

struct CurveConfig {
  std::vector<double> fractions = default_fractions();
  SizeUnit unit = SizeUnit::kMeasurements;
  // Average per-test-assay AUROCs instead of pooling all predictions.
  bool macro = false;
  bool normalize_raw = false;
  TrainConfig predictor;
  std::size_t jobs = 1;
};

// Descriptors of the split's train assays, in train_ids order.
std::vector<CandidateAssay> split_candidates(const AssayCollection& collection, const SplitSpec& split);

// Ranking of the split's train assays for sampled test assay `test_index`.
// The random strategy draws from a seed derived from (run_seed, test_index).
RankedSelection rank_for_test(const AssayCollection& collection, std::span<const CandidateAssay> candidates,
                              const SplitSpec& split, std::size_t test_index, StrategyKind strategy,
                              const HeadParams* head, bool normalize_raw, std::uint64_t run_seed);

// For every sampled test assay and fraction: rank the split's train assays,
// select a subset, train a predictor on it, score the test assay. Predictions
// are pooled across test assays per fraction. The predictor seed depends on
// the run seed only, so identical training sets give identical models across
// strategies. bao-exact produces a single point whose fraction is the mean
// selected share. `head` is required for assaymatch.
LearningCurve run_learning_curve(const AssayCollection& collection, const SplitSpec& split,
                                 StrategyKind strategy, const HeadParams* head,
                                 const CurveConfig& config, std::size_t run_index,
                                 std::uint64_t run_seed);

// Trapezoid of AUROC x 100 over the defined points, divided by their
// fraction span. Points are sorted first; needs two defined points.
double aulc(std::span<const CurvePoint> points);

struct TTest {
  double t = 0.0;
  double p = 1.0;
  std::size_t n = 0;
};

// Two-sided paired t-test on a - b with n - 1 degrees of freedom. All-zero
// differences give t = 0, p = 1; constant nonzero differences throw.
TTest paired_t_test(std::span<const double> a, std::span<const double> b);

/// AULC for one strategy, either over every target (target_id empty) or for a
/// single target, plus the paired test against the reference strategy.
struct AulcResult {
  std::string strategy;
  std::string target_id;
  double aulc = 0.0;
  std::size_t curves = 0;
  std::size_t undefined_cells = 0;
  // Mean defined AUROC per fraction of the grid; nullopt if none defined.
  std::vector<std::optional<double>> mean_auroc;
  std::optional<TTest> versus_reference;
};

/// bao-exact has no curve: one fixed set per test assay.
struct BaoReference {
  std::string target_id;
  double mean_selected_fraction = 0.0;
  std::optional<double> mean_auroc;
  std::size_t runs = 0;
  std::size_t undefined_cells = 0;
};

struct Summary {
  std::vector<double> fractions;
  std::string reference_strategy;
  std::vector<AulcResult> rows;
  std::vector<BaoReference> bao;
};

// Pairing unit for the t-test: (target, split, fraction), AUROC averaged over
// run seeds; pairs with an undefined side are dropped.
Summary summarize(std::span<const LearningCurve> curves, std::span<const double> fractions,
                  std::string_view reference_strategy);

}  // namespace assaysel
