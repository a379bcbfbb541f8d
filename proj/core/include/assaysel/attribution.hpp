#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "assaysel/core_data.hpp"
#include "assaysel/predictor.hpp"

namespace assaysel {

/// Random k x p projection with i.i.d. Normal(0, 1/k) entries, so that
/// E[(Pa).(Pb)] = a.b. Regenerated bit-exactly from its seed.
struct ProjectionSpec {
  Matrix matrix;
  std::uint64_t seed = 0;

  static ProjectionSpec gaussian(std::size_t k, std::size_t input_dim, std::uint64_t seed);
  static ProjectionSpec identity(std::size_t input_dim);

  std::size_t k() const { return static_cast<std::size_t>(matrix.rows()); }
  std::size_t input_dim() const { return static_cast<std::size_t>(matrix.cols()); }
};

inline std::size_t default_projection_dim(std::size_t parameter_count) {
  return parameter_count < 64 ? parameter_count : 64;
}

enum class TrakEstimator {
  // score = (1/n) sum_members phi_train . phi_eval
  kPlainDot,
  // score = (1/n) sum_members phi_train^T (Phi^T Phi + ridge I)^-1 phi_eval,
  // with Phi the member's projected train-feature matrix.
  kKernelCorrected,
};

std::string_view to_string(TrakEstimator e);
TrakEstimator parse_trak_estimator(std::string_view name);

struct TrakConfig {
  std::size_t ensemble_size = 10;
  TrakEstimator estimator = TrakEstimator::kKernelCorrected;
  double ridge = 1e-3;
  // Defaults to min(64, |theta|).
  std::optional<std::size_t> projection_dim;
  TrainConfig member;
  std::uint64_t seed = 0;
  // Score matrix is filled in tile_size x tile_size blocks.
  std::size_t tile_size = 256;
  std::size_t jobs = 1;
  // A member whose subsample holds one class is redrawn at most this often.
  int max_resamples = 10;

  void validate() const;
};

struct MeasurementKey {
  std::string assay_id;
  std::string molecule_id;

  auto operator<=>(const MeasurementKey&) const = default;
};

/// Measurements to attribute, tagged with their assay.
struct AttributionSet {
  std::vector<MeasurementKey> keys;
  Dataset data;

  static AttributionSet from_assays(const AssayCollection& collection,
                                    std::span<const std::string> assay_ids);
  std::size_t size() const { return keys.size(); }
};

/// Directed attribution scores: entry (i, j) estimates the effect of training
/// on train measurement i when evaluating on eval measurement j. Not
/// symmetric in general.
struct TrakMatrix {
  std::vector<MeasurementKey> train_ids;
  std::vector<MeasurementKey> eval_ids;
  Matrix scores;
};

// phi = P . grad_theta loss(m; theta)
Vector grad_feature(const ModelParams& params, const Measurement& measurement,
                    const ProjectionSpec& projection);
Vector grad_feature(const ModelParams& params, const Eigen::Ref<const Vector>& features,
                    double label, const ProjectionSpec& projection);

// Rows follow train.keys, columns eval.keys. Members see subsets drawn in a
// canonical (assay_id, molecule_id) order, so permuting the input permutes
// the output and nothing else.
TrakMatrix trak_scores(const AttributionSet& train, const AttributionSet& eval,
                       const TrakConfig& config);

/// Mean pairwise score between assays (rows: train assays, cols: eval
/// assays). Pairs sharing a molecule id are skipped when exclude_self_pairs
/// is set; a cell with no remaining pairs is NaN.
struct AssayTrakMatrix {
  std::vector<std::string> train_assays;
  std::vector<std::string> eval_assays;
  Matrix scores;

  double at(std::string_view train_assay, std::string_view eval_assay) const;
  std::optional<std::size_t> train_index(std::string_view id) const;
  std::optional<std::size_t> eval_index(std::string_view id) const;
};

AssayTrakMatrix assay_trak_matrix(const TrakMatrix& matrix, bool exclude_self_pairs = true);

// Per-assay scores TRAK_Assay(A_i, eval) for each listed train assay.
std::vector<double> assay_trak(const TrakMatrix& matrix, std::span<const std::string> train_assays,
                               std::string_view eval_assay, bool exclude_self_pairs = true);

// Descending score; ties by ascending assay id; NaN scores last.
std::vector<std::string> rank_assays_by_trak(std::span<const std::pair<std::string, double>> scores);

// For each eval assay (anchor), the other train assays ranked by
// TRAK_Assay(., anchor). Requires the same assay set on both axes.
std::vector<std::pair<std::string, std::vector<std::string>>> anchor_rankings(
    const AssayTrakMatrix& matrix);

// Binary: "TRAKMAT1", u64 rows, u64 cols, id tables (u64 length + bytes for
// assay then molecule id, rows then cols), then rows*cols float64 LE in
// row-major order. A `.json` sidecar records the config and manifest hash.
void save_trak_matrix(const TrakMatrix& matrix, const std::filesystem::path& path,
                      const TrakConfig& config, std::string_view manifest_hash);
TrakMatrix load_trak_matrix(const std::filesystem::path& path);

}  // namespace assaysel
