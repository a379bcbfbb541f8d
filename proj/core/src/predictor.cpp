#include "assaysel/predictor.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "assaysel/error.hpp"
#include "assaysel/io.hpp"
#include "assaysel/rng.hpp"

namespace assaysel {

std::string_view to_string(Architecture arch) {
  return arch == Architecture::kLogistic ? "logistic" : "mlp";
}

Architecture parse_architecture(std::string_view name) {
  if (name == "logistic") return Architecture::kLogistic;
  if (name == "mlp" || name == "one-hidden-layer") return Architecture::kMlp;
  throw ConfigError("unknown predictor architecture '" + std::string(name) + "'");
}

std::size_t ModelParams::parameter_count(Architecture arch, std::size_t feature_dim,
                                         std::size_t hidden_dim) {
  if (arch == Architecture::kLogistic) return feature_dim + 1;
  return hidden_dim * feature_dim + 2 * hidden_dim + 1;
}

ModelParams init_params(Architecture arch, std::size_t feature_dim, std::size_t hidden_dim,
                        std::uint64_t seed) {
  ModelParams p;
  p.arch = arch;
  p.feature_dim = feature_dim;
  p.hidden_dim = arch == Architecture::kMlp ? hidden_dim : 0;
  p.theta = Vector::Zero(static_cast<Eigen::Index>(
      ModelParams::parameter_count(arch, feature_dim, p.hidden_dim)));
  if (arch == Architecture::kMlp) {
    if (hidden_dim == 0) throw ConfigError("mlp hidden_dim must be positive");
    Rng rng(derive_seed(seed, {0x1a17}));
    const auto hd = static_cast<Eigen::Index>(hidden_dim * feature_dim);
    const double s1 = std::sqrt(2.0 / static_cast<double>(std::max<std::size_t>(1, feature_dim)));
    for (Eigen::Index i = 0; i < hd; ++i) p.theta[i] = s1 * rng.normal();
    const auto h = static_cast<Eigen::Index>(hidden_dim);
    const double s2 = std::sqrt(1.0 / static_cast<double>(hidden_dim));
    for (Eigen::Index i = 0; i < h; ++i) p.theta[hd + h + i] = s2 * rng.normal();
  }
  return p;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0)) {
    throw ConfigError("subsample_fraction must be in (0, 1]");
  }
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
  if (arch == Architecture::kMlp && hidden_dim == 0) throw ConfigError("hidden_dim must be positive");
}

Dataset Dataset::from(std::span<const Measurement> measurements) {
  std::vector<const Measurement*> ptrs;
  ptrs.reserve(measurements.size());
  for (const auto& m : measurements) ptrs.push_back(&m);
  return from(std::span<const Measurement* const>(ptrs));
}

Dataset Dataset::from(std::span<const Measurement* const> measurements) {
  Dataset d;
  const auto n = static_cast<Eigen::Index>(measurements.size());
  const auto dim = n == 0 ? 0 : measurements.front()->features.size();
  d.features.resize(n, dim);
  d.labels.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& m = *measurements[static_cast<std::size_t>(i)];
    if (m.features.size() != dim) {
      throw DataError(DataErrc::kDimensionMismatch, "molecule " + m.molecule_id);
    }
    d.features.row(i) = m.features.transpose();
    d.labels[i] = static_cast<double>(m.label);
  }
  return d;
}

namespace {

void check_dim(const ModelParams& params, Eigen::Index dim) {
  if (static_cast<std::size_t>(dim) != params.feature_dim) {
    throw DataError(DataErrc::kDimensionMismatch,
                    "model expects " + std::to_string(params.feature_dim) + " features, got " +
                        std::to_string(dim));
  }
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double clamp_probability(double p) {
  return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
}

struct MlpView {
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> w1;
  Eigen::Map<const Vector> b1;
  Eigen::Map<const Vector> w2;
  double b2;

  explicit MlpView(const ModelParams& p)
      : w1(p.theta.data(), static_cast<Eigen::Index>(p.hidden_dim),
           static_cast<Eigen::Index>(p.feature_dim)),
        b1(p.theta.data() + p.hidden_dim * p.feature_dim, static_cast<Eigen::Index>(p.hidden_dim)),
        w2(p.theta.data() + p.hidden_dim * (p.feature_dim + 1),
           static_cast<Eigen::Index>(p.hidden_dim)),
        b2(p.theta[p.theta.size() - 1]) {}
};

double logit_unchecked(const ModelParams& params, const Eigen::Ref<const Vector>& x) {
  if (params.arch == Architecture::kLogistic) {
    const auto d = static_cast<Eigen::Index>(params.feature_dim);
    return params.theta.head(d).dot(x) + params.theta[d];
  }
  const MlpView v(params);
  return v.w2.dot((v.w1 * x + v.b1).cwiseMax(0.0)) + v.b2;
}

// Adds weight * d(loss)/d(theta) into `grad`; returns the loss.
double accumulate_loss_grad(const ModelParams& params, const Eigen::Ref<const Vector>& x,
                            double y, double weight, Vector& grad) {
  double z;
  Vector hidden_pre;
  if (params.arch == Architecture::kLogistic) {
    const auto d = static_cast<Eigen::Index>(params.feature_dim);
    z = params.theta.head(d).dot(x) + params.theta[d];
  } else {
    const MlpView v(params);
    hidden_pre = v.w1 * x + v.b1;
    z = v.w2.dot(hidden_pre.cwiseMax(0.0)) + v.b2;
  }
  const double p = clamp_probability(sigmoid(z));
  const double loss = -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
  // Gradient of the unclamped cross-entropy; identical wherever the clamp is
  // inactive, and ~0 where it is active.
  const double dz = weight * (sigmoid(z) - y);
  if (params.arch == Architecture::kLogistic) {
    const auto d = static_cast<Eigen::Index>(params.feature_dim);
    grad.head(d).noalias() += dz * x;
    grad[d] += dz;
  } else {
    const MlpView v(params);
    const auto h = static_cast<Eigen::Index>(params.hidden_dim);
    const auto dd = static_cast<Eigen::Index>(params.feature_dim);
    const Vector hidden = hidden_pre.cwiseMax(0.0);
    Vector dh = dz * v.w2;
    for (Eigen::Index i = 0; i < h; ++i) {
      if (hidden_pre[i] <= 0.0) dh[i] = 0.0;
    }
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> gw1(
        grad.data(), h, dd);
    gw1.noalias() += dh * x.transpose();
    grad.segment(h * dd, h) += dh;
    grad.segment(h * dd + h, h) += dz * hidden;
    grad[grad.size() - 1] += dz;
  }
  return loss;
}

}  // namespace

double logit(const ModelParams& params, const Eigen::Ref<const Vector>& features) {
  check_dim(params, features.size());
  return logit_unchecked(params, features);
}

double predict_proba(const ModelParams& params, const Eigen::Ref<const Vector>& features) {
  return clamp_probability(sigmoid(logit(params, features)));
}

Vector predict_proba_rows(const ModelParams& params, const Matrix& features) {
  check_dim(params, features.cols());
  Vector out(features.rows());
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    out[i] = clamp_probability(sigmoid(logit_unchecked(params, features.row(i).transpose())));
  }
  return out;
}

LossGrad loss_and_grad(const ModelParams& params, const Eigen::Ref<const Vector>& features,
                       double label) {
  check_dim(params, features.size());
  LossGrad out;
  out.grad = Vector::Zero(params.theta.size());
  out.loss = accumulate_loss_grad(params, features, label, 1.0, out.grad);
  return out;
}

LossGrad loss_and_grad(const ModelParams& params, const Measurement& m) {
  return loss_and_grad(params, m.features, static_cast<double>(m.label));
}

double mean_loss(const ModelParams& params, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  check_dim(params, static_cast<Eigen::Index>(data.dim()));
  double total = 0.0;
  for (Eigen::Index i = 0; i < data.features.rows(); ++i) {
    const double p = clamp_probability(sigmoid(logit_unchecked(params, data.features.row(i).transpose())));
    const double y = data.labels[i];
    total += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
  }
  return total / static_cast<double>(data.size());
}

TrainedModel train(const Dataset& data, const TrainConfig& config) {
  config.validate();
  if (data.size() == 0) throw ComputeError("cannot train on an empty dataset");
  TrainedModel out;
  out.params = init_params(config.arch, data.dim(), config.hidden_dim, config.seed);
  const double positives = data.labels.sum();
  out.degenerate = positives == 0.0 || positives == static_cast<double>(data.size());

  Rng rng(derive_seed(config.seed, {0x5eed}));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Vector grad(out.params.theta.size());
  Vector velocity = Vector::Zero(out.params.theta.size());
  out.epoch_loss.reserve(config.epochs);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double epoch_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double w = 1.0 / static_cast<double>(end - start);
      grad.setZero();
      for (std::size_t k = start; k < end; ++k) {
        const auto i = static_cast<Eigen::Index>(order[k]);
        epoch_total += accumulate_loss_grad(out.params, data.features.row(i).transpose(),
                                            data.labels[i], w, grad);
      }
      if (config.weight_decay > 0.0) grad.noalias() += config.weight_decay * out.params.theta;
      if (config.momentum > 0.0) {
        velocity = config.momentum * velocity - config.learning_rate * grad;
        out.params.theta += velocity;
      } else {
        out.params.theta.noalias() -= config.learning_rate * grad;
      }
    }
    out.epoch_loss.push_back(epoch_total / static_cast<double>(order.size()));
  }
  return out;
}

TrainedModel train(std::span<const Measurement> data, const TrainConfig& config) {
  return train(Dataset::from(data), config);
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& stem,
                     std::uint64_t seed, std::string_view manifest_hash) {
  std::string blob;
  io::append_f64_le(blob, std::span<const double>(params.theta.data(), params.size()));
  auto bin = stem;
  bin += ".bin";
  io::write_file(bin, blob);
  const nlohmann::ordered_json meta = {
      {"architecture", to_string(params.arch)},
      {"feature_dim", params.feature_dim},
      {"hidden_dim", params.hidden_dim},
      {"parameter_count", params.size()},
      {"seed", seed},
      {"manifest_hash", manifest_hash},
  };
  auto json = stem;
  json += ".json";
  io::write_file(json, meta.dump(2) + "\n");
}

ModelParams load_checkpoint(const std::filesystem::path& stem) {
  auto json = stem;
  json += ".json";
  auto bin = stem;
  bin += ".bin";
  const auto meta = nlohmann::json::parse(io::read_file(json));
  ModelParams p;
  p.arch = parse_architecture(meta.at("architecture").get<std::string>());
  p.feature_dim = meta.at("feature_dim").get<std::size_t>();
  p.hidden_dim = meta.at("hidden_dim").get<std::size_t>();
  const auto n = ModelParams::parameter_count(p.arch, p.feature_dim, p.hidden_dim);
  const auto blob = io::read_file(bin);
  if (blob.size() != n * sizeof(double)) {
    throw DataError(DataErrc::kDimensionMismatch, "checkpoint " + bin.string() + " has wrong size");
  }
  const auto values = io::read_f64_le(blob, n);
  p.theta = Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(n));
  return p;
}

}  // namespace assaysel
