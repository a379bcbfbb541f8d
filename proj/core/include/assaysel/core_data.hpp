#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace assaysel {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Activity threshold in nanomolar: a measurement is active when its IC50 is
/// strictly below 1 uM.
inline constexpr double kActiveThresholdNm = 1000.0;

constexpr int activity_label(double ic50_nm) noexcept {
  return ic50_nm < kActiveThresholdNm ? 1 : 0;
}

struct Measurement {
  std::string molecule_id;
  Vector features;
  double ic50_nm = 0.0;
  int label = 0;
};

Measurement make_measurement(std::string molecule_id, Vector features, double ic50_nm);

struct AssayRecord {
  std::string assay_id;
  std::string target_id;
  std::string description;
  std::optional<std::string> bao_label;
  std::vector<Measurement> measurements;
};

struct EmbeddingRecord {
  std::string assay_id;
  Vector raw;
  std::optional<Vector> finetuned;
};

// Ordered by assay id so every iteration over embeddings is deterministic.
using EmbeddingMap = std::map<std::string, EmbeddingRecord, std::less<>>;

/// Canonical grouping key for assay descriptions: Unicode NFC, then leading
/// and trailing whitespace removed. Two assays share a description group iff
/// their keys are byte-equal.
std::string description_key(std::string_view description);

/// Immutable set of assays for one target. Copies share the underlying
/// storage, so a collection can be handed to worker threads freely.
///
/// Construction validates: at least one assay, unique assay ids, non-empty
/// measurements, one target, one feature dimension, and no duplicate
/// (assay_id, molecule_id) pairs. Embeddings are optional at construction;
/// once attached they must cover every assay and nothing else.
class AssayCollection {
 public:
  static AssayCollection create(std::string target_id, std::vector<AssayRecord> assays,
                                EmbeddingMap embeddings = {});

  AssayCollection with_embeddings(EmbeddingMap embeddings) const;

  const std::string& target_id() const { return impl_->target_id; }
  std::span<const AssayRecord> assays() const { return impl_->assays; }
  std::size_t size() const { return impl_->assays.size(); }
  const AssayRecord& assay(std::string_view assay_id) const;
  std::optional<std::size_t> index_of(std::string_view assay_id) const;

  bool has_embeddings() const { return !impl_->embeddings.empty(); }
  const EmbeddingMap& embeddings() const { return impl_->embeddings; }
  const EmbeddingRecord& embedding(std::string_view assay_id) const;

  std::size_t feature_dim() const { return impl_->feature_dim; }
  std::size_t embedding_dim() const { return impl_->embedding_dim; }
  std::size_t measurement_count() const { return impl_->measurement_count; }

 private:
  struct Impl {
    std::string target_id;
    std::vector<AssayRecord> assays;
    std::map<std::string, std::size_t, std::less<>> index;
    EmbeddingMap embeddings;
    std::size_t feature_dim = 0;
    std::size_t embedding_dim = 0;
    std::size_t measurement_count = 0;
  };

  explicit AssayCollection(std::shared_ptr<const Impl> impl) : impl_(std::move(impl)) {}

  static void validate_embeddings(const Impl& impl, const EmbeddingMap& embeddings,
                                  std::size_t& dim);

  std::shared_ptr<const Impl> impl_;
};

// assays.csv:        assay_id,target_id,description,bao_label
// measurements.csv:  assay_id,molecule_id,ic50_nM,f0,...,f{D-1}
// Returns one collection per target, sorted by target id.
std::vector<AssayCollection> parse_assay_tables(const std::filesystem::path& assay_file,
                                                const std::filesystem::path& measurement_file);
std::vector<AssayCollection> parse_assay_tables_text(std::string_view assay_csv,
                                                     std::string_view measurement_csv);

// Inverse of parse_assay_tables; writing then parsing yields identical data.
std::pair<std::string, std::string> format_assay_tables(std::span<const AssayCollection> collections);
void write_assay_tables(std::span<const AssayCollection> collections,
                        const std::filesystem::path& assay_file,
                        const std::filesystem::path& measurement_file);

// embeddings.csv: assay_id,e0,...,e{D-1}
EmbeddingMap parse_embeddings_csv(std::string_view text, std::string_view source_name);
EmbeddingMap load_embeddings_file(const std::filesystem::path& path);
std::string format_embeddings_csv(const EmbeddingMap& embeddings, bool finetuned);

struct CollectionStats {
  std::size_t assay_count = 0;
  std::size_t measurement_count = 0;
  double active_fraction = 0.0;
  std::vector<std::pair<std::string, std::size_t>> assay_sizes;
};

CollectionStats collection_stats(const AssayCollection& collection);

}  // namespace assaysel
