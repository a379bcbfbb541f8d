#include "assaysel/attribution.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "assaysel/error.hpp"
#include "assaysel/io.hpp"
#include "assaysel/parallel.hpp"
#include "assaysel/rng.hpp"

namespace assaysel {

ProjectionSpec ProjectionSpec::gaussian(std::size_t k, std::size_t input_dim, std::uint64_t seed) {
  if (k == 0 || input_dim == 0) throw ConfigError("projection dimensions must be positive");
  ProjectionSpec p;
  p.seed = seed;
  p.matrix.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(input_dim));
  Rng rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(k));
  // Row-major fill so the stream order does not depend on Eigen's storage.
  for (Eigen::Index r = 0; r < p.matrix.rows(); ++r) {
    for (Eigen::Index c = 0; c < p.matrix.cols(); ++c) p.matrix(r, c) = scale * rng.normal();
  }
  return p;
}

ProjectionSpec ProjectionSpec::identity(std::size_t input_dim) {
  ProjectionSpec p;
  p.matrix = Matrix::Identity(static_cast<Eigen::Index>(input_dim),
                              static_cast<Eigen::Index>(input_dim));
  return p;
}

std::string_view to_string(TrakEstimator e) {
  return e == TrakEstimator::kPlainDot ? "plain-dot" : "kernel-corrected";
}

TrakEstimator parse_trak_estimator(std::string_view name) {
  if (name == "plain-dot") return TrakEstimator::kPlainDot;
  if (name == "kernel-corrected") return TrakEstimator::kKernelCorrected;
  throw ConfigError("unknown TRAK estimator '" + std::string(name) + "'");
}

void TrakConfig::validate() const {
  if (ensemble_size == 0) throw ConfigError("TRAK ensemble size must be >= 1");
  if (!(ridge > 0.0)) throw ConfigError("TRAK ridge must be positive");
  if (projection_dim && *projection_dim == 0) throw ConfigError("projection_dim must be >= 1");
  if (tile_size == 0) throw ConfigError("tile_size must be positive");
  if (max_resamples < 0) throw ConfigError("max_resamples must be >= 0");
  member.validate();
}

AttributionSet AttributionSet::from_assays(const AssayCollection& collection,
                                           std::span<const std::string> assay_ids) {
  AttributionSet set;
  std::vector<const Measurement*> ptrs;
  for (const auto& id : assay_ids) {
    const auto& a = collection.assay(id);
    for (const auto& m : a.measurements) {
      set.keys.push_back({a.assay_id, m.molecule_id});
      ptrs.push_back(&m);
    }
  }
  set.data = Dataset::from(std::span<const Measurement* const>(ptrs));
  return set;
}

Vector grad_feature(const ModelParams& params, const Eigen::Ref<const Vector>& features,
                    double label, const ProjectionSpec& projection) {
  if (projection.input_dim() != params.size()) {
    throw DataError(DataErrc::kDimensionMismatch,
                    "projection expects " + std::to_string(projection.input_dim()) +
                        " parameters, model has " + std::to_string(params.size()));
  }
  return projection.matrix * loss_and_grad(params, features, label).grad;
}

Vector grad_feature(const ModelParams& params, const Measurement& measurement,
                    const ProjectionSpec& projection) {
  return grad_feature(params, measurement.features, static_cast<double>(measurement.label),
                      projection);
}

namespace {

Matrix projected_gradients(const ModelParams& params, const Dataset& data,
                           const ProjectionSpec& projection) {
  Matrix grads(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(params.size()));
  for (Eigen::Index i = 0; i < grads.rows(); ++i) {
    grads.row(i) = loss_and_grad(params, data.features.row(i).transpose(), data.labels[i])
                       .grad.transpose();
  }
  return grads * projection.matrix.transpose();
}

struct MemberFeatures {
  Matrix train;  // N x k, in caller's row order; kernel-corrected rows pre-multiplied
  Matrix eval;   // M x k
};

}  // namespace

TrakMatrix trak_scores(const AttributionSet& train, const AttributionSet& eval,
                       const TrakConfig& config) {
  config.validate();
  if (train.size() == 0 || eval.size() == 0) {
    throw ComputeError("TRAK needs non-empty train and eval sets");
  }
  if (train.data.dim() != eval.data.dim()) {
    throw DataError(DataErrc::kDimensionMismatch, "train and eval feature dimensions differ");
  }
  const std::size_t n_train = train.size();

  // canonical[c] = caller row index of the c-th key in sorted order.
  std::vector<std::size_t> canonical(n_train);
  std::iota(canonical.begin(), canonical.end(), std::size_t{0});
  std::sort(canonical.begin(), canonical.end(),
            [&](std::size_t a, std::size_t b) { return train.keys[a] < train.keys[b]; });

  const auto n_params =
      ModelParams::parameter_count(config.member.arch, train.data.dim(), config.member.hidden_dim);
  const std::size_t k = config.projection_dim.value_or(default_projection_dim(n_params));
  const auto subset_size = static_cast<std::size_t>(std::max<double>(
      1.0, std::round(config.member.subsample_fraction * static_cast<double>(n_train))));

  std::vector<MemberFeatures> members(config.ensemble_size);
  parallel_for(config.ensemble_size, config.jobs, [&](std::size_t e) {
    std::vector<std::size_t> subset;
    bool ok = false;
    int attempt = 0;
    for (; attempt <= config.max_resamples; ++attempt) {
      std::vector<std::size_t> pool(n_train);
      std::iota(pool.begin(), pool.end(), std::size_t{0});
      Rng rng(derive_seed(config.seed, {e, static_cast<std::uint64_t>(attempt), 0x5ab}));
      rng.shuffle(std::span<std::size_t>(pool));
      pool.resize(subset_size);
      std::sort(pool.begin(), pool.end());
      double positives = 0.0;
      for (auto c : pool) positives += train.data.labels[static_cast<Eigen::Index>(canonical[c])];
      if (positives > 0.0 && positives < static_cast<double>(pool.size())) {
        subset = std::move(pool);
        ok = true;
        break;
      }
    }
    if (!ok) {
      throw ComputeError("TRAK ensemble member " + std::to_string(e) + " drew a single-class subsample " +
                         std::to_string(config.max_resamples + 1) + " times");
    }
    Dataset sub;
    sub.features.resize(static_cast<Eigen::Index>(subset.size()),
                        static_cast<Eigen::Index>(train.data.dim()));
    sub.labels.resize(static_cast<Eigen::Index>(subset.size()));
    for (std::size_t r = 0; r < subset.size(); ++r) {
      const auto src = static_cast<Eigen::Index>(canonical[subset[r]]);
      sub.features.row(static_cast<Eigen::Index>(r)) = train.data.features.row(src);
      sub.labels[static_cast<Eigen::Index>(r)] = train.data.labels[src];
    }
    TrainConfig member_cfg = config.member;
    member_cfg.seed = derive_seed(config.seed, {e, static_cast<std::uint64_t>(attempt), 0x7a1});
    const auto model = assaysel::train(sub, member_cfg);
    const auto projection = ProjectionSpec::gaussian(k, n_params, derive_seed(config.seed, {e, 0x960}));

    auto& out = members[e];
    out.train = projected_gradients(model.params, train.data, projection);
    out.eval = projected_gradients(model.params, eval.data, projection);
    if (config.estimator == TrakEstimator::kKernelCorrected) {
      // The Gram matrix is accumulated in canonical order so that it is
      // bit-identical under any permutation of the caller's rows.
      Matrix gram = Matrix::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
      for (auto c : canonical) {
        const auto row = out.train.row(static_cast<Eigen::Index>(c));
        gram.noalias() += row.transpose() * row;
      }
      gram.diagonal().array() += config.ridge;
      out.train = gram.ldlt().solve(out.train.transpose()).transpose();
    }
  });

  TrakMatrix result;
  result.train_ids = train.keys;
  result.eval_ids = eval.keys;
  const auto rows = static_cast<Eigen::Index>(n_train);
  const auto cols = static_cast<Eigen::Index>(eval.size());
  result.scores = Matrix::Zero(rows, cols);
  const auto tile = static_cast<Eigen::Index>(config.tile_size);
  const Eigen::Index row_tiles = (rows + tile - 1) / tile;
  const Eigen::Index col_tiles = (cols + tile - 1) / tile;
  const double inv_n = 1.0 / static_cast<double>(config.ensemble_size);
  parallel_for(static_cast<std::size_t>(row_tiles * col_tiles), config.jobs, [&](std::size_t t) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(t) / col_tiles * tile;
    const Eigen::Index c0 = static_cast<Eigen::Index>(t) % col_tiles * tile;
    const Eigen::Index nr = std::min(tile, rows - r0);
    const Eigen::Index nc = std::min(tile, cols - c0);
    Matrix block = Matrix::Zero(nr, nc);
    for (const auto& m : members) {
      block.noalias() += m.train.middleRows(r0, nr) * m.eval.middleRows(c0, nc).transpose();
    }
    result.scores.block(r0, c0, nr, nc) = block * inv_n;
  });
  return result;
}

// ---------------------------------------------------------------------------
// Assay-level aggregation

namespace {

std::vector<std::pair<std::string, std::vector<std::size_t>>> group_by_assay(
    const std::vector<MeasurementKey>& keys) {
  std::vector<std::pair<std::string, std::vector<std::size_t>>> groups;
  std::map<std::string, std::size_t, std::less<>> where;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    auto [it, inserted] = where.emplace(keys[i].assay_id, groups.size());
    if (inserted) groups.emplace_back(keys[i].assay_id, std::vector<std::size_t>{});
    groups[it->second].second.push_back(i);
  }
  return groups;
}

double mean_block(const TrakMatrix& m, const std::vector<std::size_t>& rows,
                  const std::vector<std::size_t>& cols, bool exclude_self) {
  double sum = 0.0;
  std::size_t count = 0;
  for (auto r : rows) {
    for (auto c : cols) {
      if (exclude_self && m.train_ids[r].molecule_id == m.eval_ids[c].molecule_id) continue;
      sum += m.scores(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
      ++count;
    }
  }
  return count == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(count);
}

std::optional<std::size_t> find_id(const std::vector<std::string>& ids, std::string_view id) {
  auto it = std::find(ids.begin(), ids.end(), id);
  if (it == ids.end()) return std::nullopt;
  return static_cast<std::size_t>(it - ids.begin());
}

}  // namespace

std::optional<std::size_t> AssayTrakMatrix::train_index(std::string_view id) const {
  return find_id(train_assays, id);
}

std::optional<std::size_t> AssayTrakMatrix::eval_index(std::string_view id) const {
  return find_id(eval_assays, id);
}

double AssayTrakMatrix::at(std::string_view train_assay, std::string_view eval_assay) const {
  const auto r = train_index(train_assay);
  const auto c = eval_index(eval_assay);
  if (!r || !c) {
    throw DataError(DataErrc::kUnknownAssay,
                    "no per-assay score for (" + std::string(train_assay) + ", " +
                        std::string(eval_assay) + ")");
  }
  return scores(static_cast<Eigen::Index>(*r), static_cast<Eigen::Index>(*c));
}

AssayTrakMatrix assay_trak_matrix(const TrakMatrix& matrix, bool exclude_self_pairs) {
  const auto rows = group_by_assay(matrix.train_ids);
  const auto cols = group_by_assay(matrix.eval_ids);
  AssayTrakMatrix out;
  out.scores.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (const auto& [id, _] : rows) out.train_assays.push_back(id);
  for (const auto& [id, _] : cols) out.eval_assays.push_back(id);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      out.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          mean_block(matrix, rows[i].second, cols[j].second, exclude_self_pairs);
    }
  }
  return out;
}

std::vector<double> assay_trak(const TrakMatrix& matrix, std::span<const std::string> train_assays,
                               std::string_view eval_assay, bool exclude_self_pairs) {
  std::vector<std::size_t> cols;
  for (std::size_t c = 0; c < matrix.eval_ids.size(); ++c) {
    if (matrix.eval_ids[c].assay_id == eval_assay) cols.push_back(c);
  }
  if (cols.empty()) {
    throw DataError(DataErrc::kUnknownAssay,
                    "eval assay " + std::string(eval_assay) + " has no molecules in the matrix");
  }
  std::vector<double> out;
  out.reserve(train_assays.size());
  for (const auto& id : train_assays) {
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < matrix.train_ids.size(); ++r) {
      if (matrix.train_ids[r].assay_id == id) rows.push_back(r);
    }
    if (rows.empty()) {
      throw DataError(DataErrc::kUnknownAssay, "train assay " + id + " has no molecules in the matrix");
    }
    out.push_back(mean_block(matrix, rows, cols, exclude_self_pairs));
  }
  return out;
}

std::vector<std::string> rank_assays_by_trak(std::span<const std::pair<std::string, double>> scores) {
  std::vector<std::pair<std::string, double>> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    const bool an = std::isnan(a.second);
    const bool bn = std::isnan(b.second);
    if (an != bn) return bn;
    if (!an && a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> out;
  out.reserve(sorted.size());
  for (auto& [id, _] : sorted) out.push_back(std::move(id));
  return out;
}

std::vector<std::pair<std::string, std::vector<std::string>>> anchor_rankings(
    const AssayTrakMatrix& matrix) {
  std::vector<std::pair<std::string, std::vector<std::string>>> out;
  for (std::size_t c = 0; c < matrix.eval_assays.size(); ++c) {
    const auto& anchor = matrix.eval_assays[c];
    std::vector<std::pair<std::string, double>> scores;
    for (std::size_t r = 0; r < matrix.train_assays.size(); ++r) {
      if (matrix.train_assays[r] == anchor) continue;
      scores.emplace_back(matrix.train_assays[r],
                          matrix.scores(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)));
    }
    out.emplace_back(anchor, rank_assays_by_trak(scores));
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

constexpr std::string_view kTrakMagic = "TRAKMAT1";

void append_string(std::string& out, const std::string& s) {
  io::append_u64_le(out, s.size());
  out += s;
}

std::string read_string(std::string_view bytes, std::size_t& offset) {
  const auto n = io::read_u64_le(bytes, offset);
  offset += 8;
  if (offset + n > bytes.size()) throw DataError(DataErrc::kIo, "TRAK id table truncated");
  std::string s(bytes.substr(offset, n));
  offset += n;
  return s;
}

}  // namespace

void save_trak_matrix(const TrakMatrix& matrix, const std::filesystem::path& path,
                      const TrakConfig& config, std::string_view manifest_hash) {
  std::string blob(kTrakMagic);
  io::append_u64_le(blob, matrix.train_ids.size());
  io::append_u64_le(blob, matrix.eval_ids.size());
  for (const auto* ids : {&matrix.train_ids, &matrix.eval_ids}) {
    for (const auto& k : *ids) {
      append_string(blob, k.assay_id);
      append_string(blob, k.molecule_id);
    }
  }
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> row_major = matrix.scores;
  io::append_f64_le(blob, std::span<const double>(row_major.data(), static_cast<std::size_t>(row_major.size())));
  io::write_file(path, blob);

  const nlohmann::ordered_json meta = {
      {"rows", matrix.train_ids.size()},
      {"cols", matrix.eval_ids.size()},
      {"ensemble_size", config.ensemble_size},
      {"estimator", to_string(config.estimator)},
      {"ridge", config.ridge},
      {"projection_dim", config.projection_dim ? nlohmann::ordered_json(*config.projection_dim)
                                               : nlohmann::ordered_json(nullptr)},
      {"subsample_fraction", config.member.subsample_fraction},
      {"member_architecture", to_string(config.member.arch)},
      {"member_learning_rate", config.member.learning_rate},
      {"member_epochs", config.member.epochs},
      {"member_batch_size", config.member.batch_size},
      {"seed", config.seed},
      {"manifest_hash", manifest_hash},
  };
  auto sidecar = path;
  sidecar += ".json";
  io::write_file(sidecar, meta.dump(2) + "\n");
}

TrakMatrix load_trak_matrix(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  std::string_view view(bytes);
  if (!view.starts_with(kTrakMagic)) {
    throw DataError(DataErrc::kIo, path.string() + " is not a TRAK matrix file");
  }
  std::size_t offset = kTrakMagic.size();
  const auto rows = io::read_u64_le(view, offset);
  const auto cols = io::read_u64_le(view, offset + 8);
  offset += 16;
  TrakMatrix m;
  for (auto* ids : {&m.train_ids, &m.eval_ids}) {
    const auto n = ids == &m.train_ids ? rows : cols;
    ids->reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
      MeasurementKey k;
      k.assay_id = read_string(view, offset);
      k.molecule_id = read_string(view, offset);
      ids->push_back(std::move(k));
    }
  }
  const auto values = io::read_f64_le(view, rows * cols, offset);
  m.scores = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  return m;
}

}  // namespace assaysel
