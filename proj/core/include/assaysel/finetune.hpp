#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "assaysel/core_data.hpp"

namespace assaysel {

struct Triplet {
  std::string anchor;
  std::string positive;
  std::string negative;

  bool operator==(const Triplet&) const = default;
};

struct FinetuneConfig {
  double margin = 0.1;
  double learning_rate = 1e-4;
  std::size_t batch_size = 512;
  std::size_t epochs = 10;
  std::size_t hidden_dim = 768;
  std::size_t output_dim = 768;
  std::size_t triplets_per_anchor = 50;
  std::uint64_t seed = 0;
  // Adam moments.
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Train one head over every target's assays instead of one per target.
  bool joint_targets = false;

  void validate() const;
};

/// Two fully connected layers with a ReLU between them, followed by L2
/// normalization:  f(x) = normalize(W2 relu(W1 x + b1) + b2).
/// theta = [W1 (H x D, row-major), b1 (H), W2 (O x H, row-major), b2 (O)].
struct HeadParams {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t output_dim = 0;
  Vector theta;

  static std::size_t parameter_count(std::size_t input, std::size_t hidden, std::size_t output);
  static HeadParams init(std::size_t input, std::size_t hidden, std::size_t output,
                         std::uint64_t seed);
  // Exact identity before normalization: W1 = [I; -I], W2 = [I, -I], so
  // relu(x) - relu(-x) = x. Hidden width is 2 * input.
  static HeadParams identity(std::size_t input);
};

// Finetuned unit vector. Throws on dimension mismatch or a zero pre-norm
// output.
Vector embed(const HeadParams& head, const Eigen::Ref<const Vector>& raw);

using RawEmbeddings = std::map<std::string, Vector, std::less<>>;
using AnchorRanking = std::pair<std::string, std::vector<std::string>>;

struct TripletSample {
  std::vector<Triplet> triplets;
  // Anchors whose ranking had fewer than two entries.
  std::vector<std::string> skipped_anchors;
};

// Per anchor, `triplets_per_anchor` draws: positive uniform over the first
// ceil(n/2) ranks, negative uniform over the rest.
TripletSample sample_triplets(std::span<const AnchorRanking> rankings, const FinetuneConfig& config);

// max(0, d_ap - d_an + margin)
double triplet_loss(double d_ap, double d_an, double margin);
double triplet_loss(const HeadParams& head, const Vector& anchor, const Vector& positive,
                    const Vector& negative, double margin);

struct TripletBatchLoss {
  double loss = 0.0;
  Vector grad;  // d(mean loss)/d(theta)
};

// Mean loss over `triplets` and its gradient; a triplet sitting exactly on
// the hinge contributes zero gradient.
TripletBatchLoss triplet_loss_grad(const HeadParams& head, const RawEmbeddings& raw,
                                   std::span<const Triplet> triplets, double margin);
double mean_triplet_loss(const HeadParams& head, const RawEmbeddings& raw,
                         std::span<const Triplet> triplets, double margin);

// Fraction of triplets whose positive is strictly closer to the anchor than
// the negative, measured in the head's output space.
double triplet_satisfaction(const HeadParams& head, const RawEmbeddings& raw,
                            std::span<const Triplet> triplets);

struct HeadTrainResult {
  HeadParams head;
  // Full-pass mean loss at initialization, then after each epoch.
  std::vector<double> loss_history;
};

// Mini-batch Adam on the mean triplet loss. Only ids referenced by
// `triplets` are read from `raw`.
HeadTrainResult train_head(const RawEmbeddings& raw, std::span<const Triplet> triplets,
                           const FinetuneConfig& config);

void save_head(const HeadTrainResult& result, const FinetuneConfig& config,
               const std::filesystem::path& stem, std::string_view manifest_hash);
HeadParams load_head(const std::filesystem::path& stem);

}  // namespace assaysel
