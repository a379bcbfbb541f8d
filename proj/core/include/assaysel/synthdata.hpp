#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "assaysel/core_data.hpp"
#include "assaysel/predictor.hpp"

namespace assaysel {

/// A heterogeneous-assay world. Molecules are Gaussian feature vectors with a
/// hidden linear activity model. Every assay belongs to a protocol family;
/// "incompatible" families read activity through a logit offset and flip
/// labels at a family noise rate. Description embeddings are the family
/// centroid plus Gaussian noise, so text similarity tracks protocol family.
struct WorldConfig {
  std::string target_id = "SYN1";
  std::size_t n_assays = 60;
  std::size_t min_measurements = 10;
  std::size_t max_measurements = 30;
  std::size_t feature_dim = 16;
  std::size_t n_families = 6;
  // round(incompatible_fraction * n_assays) assays land in incompatible families.
  double incompatible_fraction = 0.3;
  // Incompatible families alternate +shift / -shift.
  double incompatible_logit_shift = 3.0;
  double incompatible_noise_rate = 0.3;
  double compatible_noise_rate = 0.0;
  // Per-family overrides; when non-empty they must have n_families entries.
  std::vector<double> family_logit_shift;
  std::vector<double> family_noise_rate;
  // Standard deviation of the clean logit across molecules.
  double activity_scale = 3.0;
  // Per-measurement Gaussian noise on the clean logit.
  double activity_noise = 0.3;
  std::size_t embedding_dim = 32;
  // Per-component noise, relative to a centroid of norm ~1.
  double embedding_noise = 0.3;
  std::size_t n_bao_labels = 3;
  std::uint64_t seed = 0;

  void validate() const;
};

struct GroundTruth {
  Vector activity_weights;
  double activity_bias = 0.0;
  std::vector<double> family_shift;
  std::vector<double> family_noise;
  std::vector<bool> family_incompatible;
  std::vector<Vector> family_centroids;
  // Indexed like the collection's assays.
  std::vector<std::size_t> assay_family;
  std::vector<bool> assay_corrupted;
  std::vector<std::vector<int>> clean_labels;
};

struct World {
  AssayCollection collection;
  GroundTruth truth;
};

World generate_world(const WorldConfig& config);

// Fresh molecules measured under `family`'s protocol (shift and label noise
// applied), e.g. for held-out evaluation sets.
std::vector<Measurement> draw_measurements(const WorldConfig& config, const GroundTruth& truth,
                                           std::size_t family, std::size_t count,
                                           std::uint64_t seed, const std::string& id_prefix);

/// mean over seeds of [loss(trained without `removed`) - loss(trained on all)]
/// on `eval`. Positive means the removed assays were helping. Both models
/// of a pair share a seed.
double retrain_delta_oracle(const AssayCollection& collection, std::span<const std::string> removed,
                            std::span<const Measurement> eval, const TrainConfig& config,
                            std::size_t n_seeds, std::size_t jobs = 1);

// Six assays of ten measurements; two sit in incompatible families. Used by
// the attribution checks.
WorldConfig attribution_fixture_config(std::uint64_t seed);

}  // namespace assaysel
