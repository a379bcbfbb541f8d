#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "assaysel/core_data.hpp"

namespace assaysel {

enum class Architecture { kLogistic, kMlp };

std::string_view to_string(Architecture arch);
Architecture parse_architecture(std::string_view name);

/// Flat parameter vector plus the shape needed to interpret it.
///
/// Logistic:  theta = [w (D), b]
/// MLP:       theta = [W1 (H x D, row-major), b1 (H), w2 (H), b2]
///            logit = w2 . relu(W1 x + b1) + b2
struct ModelParams {
  Architecture arch = Architecture::kLogistic;
  std::size_t feature_dim = 0;
  std::size_t hidden_dim = 0;
  Vector theta;

  static std::size_t parameter_count(Architecture arch, std::size_t feature_dim,
                                     std::size_t hidden_dim);
  std::size_t size() const { return static_cast<std::size_t>(theta.size()); }
};

// Logistic starts at zero; the MLP gets He-scaled Gaussian weights from `seed`.
ModelParams init_params(Architecture arch, std::size_t feature_dim, std::size_t hidden_dim,
                        std::uint64_t seed);

struct TrainConfig {
  Architecture arch = Architecture::kLogistic;
  std::size_t hidden_dim = 32;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t epochs = 50;
  std::uint64_t seed = 0;
  // Fraction of the training set each attribution ensemble member sees.
  double subsample_fraction = 0.5;
  // L2 penalty on every parameter, added to the mean batch gradient.
  double weight_decay = 0.0;
  double momentum = 0.0;

  void validate() const;
};

/// Row-major design matrix with 0/1 labels.
struct Dataset {
  Matrix features;  // n x D
  Vector labels;    // n

  static Dataset from(std::span<const Measurement> measurements);
  static Dataset from(std::span<const Measurement* const> measurements);
  std::size_t size() const { return static_cast<std::size_t>(labels.size()); }
  std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }
};

struct TrainedModel {
  ModelParams params;
  // Mean loss over each epoch's mini-batches (pre-update), one per epoch.
  std::vector<double> epoch_loss;
  // Set when the training data contained a single class.
  bool degenerate = false;
};

TrainedModel train(const Dataset& data, const TrainConfig& config);
TrainedModel train(std::span<const Measurement> data, const TrainConfig& config);

inline constexpr double kProbabilityClamp = 1e-12;

double logit(const ModelParams& params, const Eigen::Ref<const Vector>& features);
// sigmoid(logit), clamped to [1e-12, 1 - 1e-12].
double predict_proba(const ModelParams& params, const Eigen::Ref<const Vector>& features);
Vector predict_proba_rows(const ModelParams& params, const Matrix& features);

struct LossGrad {
  double loss = 0.0;
  Vector grad;
};

// Binary cross-entropy on the clamped probability and its analytic gradient
// with respect to theta.
LossGrad loss_and_grad(const ModelParams& params, const Eigen::Ref<const Vector>& features,
                       double label);
LossGrad loss_and_grad(const ModelParams& params, const Measurement& m);
double mean_loss(const ModelParams& params, const Dataset& data);

// Checkpoint: `<stem>.bin` holds theta as little-endian float64, `<stem>.json`
// holds architecture, dimensions, seed and the run's manifest hash.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& stem,
                     std::uint64_t seed, std::string_view manifest_hash);
ModelParams load_checkpoint(const std::filesystem::path& stem);

}  // namespace assaysel
