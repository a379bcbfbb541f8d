#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "assaysel/attribution.hpp"
#include "assaysel/core_data.hpp"
#include "assaysel/finetune.hpp"

namespace assaysel {

struct PcaResult {
  Vector mean;
  // One row per component, orthonormal, sign fixed so the largest-magnitude
  // entry is positive.
  Matrix components;
  // n x (number of components)
  Matrix coordinates;
  Vector explained_variance;
  Vector explained_ratio;
  double total_variance = 0.0;
};

// Rows of `points` are observations. Components with (numerically) zero
// variance are dropped, so fewer than `dims` may come back.
PcaResult pca_project(const Matrix& points, std::size_t dims = 2);

struct KMeansResult {
  std::vector<std::size_t> assignments;
  Matrix centroids;  // k x D
  // Inertia after initialization, then after every Lloyd iteration.
  std::vector<double> inertia_history;
  std::size_t iterations = 0;
  double inertia() const { return inertia_history.back(); }
};

// k-means++ seeding, then Lloyd iterations until assignments stop changing
// or max_iterations. A cluster that empties keeps its previous centroid.
KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed,
                    std::size_t max_iterations = 300);

struct ClusterHeatmap {
  std::size_t k = 0;
  std::vector<std::string> assay_ids;
  std::vector<std::size_t> assignments;
  // (i, j): mean TRAK_Assay(A, A') over A in cluster i, A' in cluster j,
  // A != A'. NaN when no pair exists.
  Matrix mean;
  Eigen::MatrixX<std::size_t> pairs;

  // mean(defined diagonal) - mean(defined off-diagonal); NaN if either side
  // is empty.
  double diagonal_dominance() const;
};

ClusterHeatmap cluster_trak_heatmap(std::span<const std::string> assay_ids,
                                    std::span<const std::size_t> assignments, std::size_t k,
                                    const AssayTrakMatrix& trak);

// sum |A_i| TRAK_Assay(A_i, test) / sum |A_i| over the selection.
double weighted_selection_trak(std::span<const std::string> selection, std::string_view test_assay,
                               const AssayTrakMatrix& trak, const AssayCollection& collection);

struct ShiftPair {
  std::string first;
  std::string second;
  double raw_distance = 0.0;
  double finetuned_distance = 0.0;
  double shift = 0.0;
};

// Every unordered pair scored by d(f(a), f(b)) - d(a, b), largest first; ties
// by (first, second). Raw vectors are L2-normalized unless told otherwise.
std::vector<ShiftPair> largest_shift_pairs(const RawEmbeddings& raw, const RawEmbeddings& finetuned,
                                           std::size_t top_n, bool normalize_raw = true);

std::string format_heatmap_csv(const ClusterHeatmap& heatmap);
std::string format_pca_csv(std::span<const std::string> ids, const PcaResult& pca,
                           std::span<const std::size_t> clusters);
std::string format_shift_pairs_csv(std::span<const ShiftPair> pairs, const AssayCollection& collection);

}  // namespace assaysel
