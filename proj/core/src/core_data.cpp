#include "assaysel/core_data.hpp"

#include <unicode/normalizer2.h>
#include <unicode/unistr.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "assaysel/error.hpp"
#include "assaysel/io.hpp"

namespace assaysel {

Measurement make_measurement(std::string molecule_id, Vector features, double ic50_nm) {
  if (!(ic50_nm > 0.0) || !std::isfinite(ic50_nm)) {
    throw DataError(DataErrc::kNonPositiveIc50,
                    "molecule " + molecule_id + ": IC50 " + io::format_double(ic50_nm));
  }
  Measurement m;
  m.molecule_id = std::move(molecule_id);
  m.features = std::move(features);
  m.ic50_nm = ic50_nm;
  m.label = activity_label(ic50_nm);
  return m;
}

std::string description_key(std::string_view description) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw ComputeError("ICU NFC normalizer unavailable");
  icu::UnicodeString text = icu::UnicodeString::fromUTF8(
      icu::StringPiece(description.data(), static_cast<int32_t>(description.size())));
  icu::UnicodeString normalized = nfc->normalize(text, status);
  if (U_FAILURE(status)) throw DataError(DataErrc::kMalformedRow, "invalid UTF-8 in description");
  normalized.trim();
  std::string out;
  normalized.toUTF8String(out);
  return out;
}

// ---------------------------------------------------------------------------
// AssayCollection

AssayCollection AssayCollection::create(std::string target_id, std::vector<AssayRecord> assays,
                                        EmbeddingMap embeddings) {
  if (assays.empty()) {
    throw DataError(DataErrc::kEmptyCollection, "target " + target_id + " has no assays");
  }
  auto impl = std::make_shared<Impl>();
  impl->target_id = std::move(target_id);
  bool have_dim = false;
  for (std::size_t i = 0; i < assays.size(); ++i) {
    const auto& a = assays[i];
    if (a.target_id != impl->target_id) {
      throw DataError(DataErrc::kMixedTargets,
                      "assay " + a.assay_id + " belongs to " + a.target_id + ", not " + impl->target_id);
    }
    if (!impl->index.emplace(a.assay_id, i).second) {
      throw DataError(DataErrc::kDuplicateAssay, "assay id " + a.assay_id);
    }
    if (a.measurements.empty()) {
      throw DataError(DataErrc::kEmptyAssay, "assay " + a.assay_id);
    }
    std::set<std::string_view> molecules;
    for (const auto& m : a.measurements) {
      if (!molecules.insert(m.molecule_id).second) {
        throw DataError(DataErrc::kDuplicateRow, "(" + a.assay_id + ", " + m.molecule_id + ")");
      }
      if (!(m.ic50_nm > 0.0)) {
        throw DataError(DataErrc::kNonPositiveIc50, "(" + a.assay_id + ", " + m.molecule_id + ")");
      }
      if (m.label != activity_label(m.ic50_nm)) {
        throw DataError(DataErrc::kMalformedRow,
                        "label does not match IC50 for (" + a.assay_id + ", " + m.molecule_id + ")");
      }
      const auto dim = static_cast<std::size_t>(m.features.size());
      if (!have_dim) {
        impl->feature_dim = dim;
        have_dim = true;
      } else if (dim != impl->feature_dim) {
        throw DataError(DataErrc::kDimensionMismatch,
                        "molecule " + m.molecule_id + " has " + std::to_string(dim) +
                            " features, expected " + std::to_string(impl->feature_dim));
      }
    }
    impl->measurement_count += a.measurements.size();
  }
  impl->assays = std::move(assays);
  if (!embeddings.empty()) {
    validate_embeddings(*impl, embeddings, impl->embedding_dim);
    impl->embeddings = std::move(embeddings);
  }
  return AssayCollection(std::move(impl));
}

void AssayCollection::validate_embeddings(const Impl& impl, const EmbeddingMap& embeddings,
                                          std::size_t& dim) {
  for (const auto& a : impl.assays) {
    if (!embeddings.contains(a.assay_id)) {
      throw DataError(DataErrc::kMissingEmbedding, "assay " + a.assay_id);
    }
  }
  bool have_dim = false;
  for (const auto& [id, e] : embeddings) {
    if (!impl.index.contains(id)) {
      throw DataError(DataErrc::kUnknownAssay, "embedding for " + id + " has no assay");
    }
    const auto d = static_cast<std::size_t>(e.raw.size());
    if (!have_dim) {
      dim = d;
      have_dim = true;
    } else if (d != dim) {
      throw DataError(DataErrc::kDimensionMismatch,
                      "embedding " + id + " has dimension " + std::to_string(d));
    }
    if (e.finetuned && std::abs(e.finetuned->norm() - 1.0) > 1e-6) {
      throw DataError(DataErrc::kMalformedRow, "finetuned embedding " + id + " is not unit norm");
    }
  }
}

AssayCollection AssayCollection::with_embeddings(EmbeddingMap embeddings) const {
  auto impl = std::make_shared<Impl>(*impl_);
  validate_embeddings(*impl, embeddings, impl->embedding_dim);
  impl->embeddings = std::move(embeddings);
  return AssayCollection(std::move(impl));
}

const AssayRecord& AssayCollection::assay(std::string_view assay_id) const {
  auto it = impl_->index.find(assay_id);
  if (it == impl_->index.end()) throw DataError(DataErrc::kUnknownAssay, std::string(assay_id));
  return impl_->assays[it->second];
}

std::optional<std::size_t> AssayCollection::index_of(std::string_view assay_id) const {
  auto it = impl_->index.find(assay_id);
  if (it == impl_->index.end()) return std::nullopt;
  return it->second;
}

const EmbeddingRecord& AssayCollection::embedding(std::string_view assay_id) const {
  auto it = impl_->embeddings.find(assay_id);
  if (it == impl_->embeddings.end()) {
    throw DataError(DataErrc::kMissingEmbedding, std::string(assay_id));
  }
  return it->second;
}

// ---------------------------------------------------------------------------
// CSV ingestion

namespace {

std::vector<std::size_t> feature_columns(const io::CsvRow& header, std::string_view prefix,
                                         std::string_view file) {
  std::vector<std::size_t> cols;
  for (std::size_t d = 0;; ++d) {
    const std::string name = std::string(prefix) + std::to_string(d);
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) break;
    cols.push_back(static_cast<std::size_t>(it - header.begin()));
  }
  // Any stray prefix+digits column beyond a gap is a schema error.
  for (const auto& h : header) {
    if (h.size() > prefix.size() && h.starts_with(prefix) &&
        std::all_of(h.begin() + static_cast<std::ptrdiff_t>(prefix.size()), h.end(),
                    [](char c) { return c >= '0' && c <= '9'; })) {
      const auto d = std::stoull(h.substr(prefix.size()));
      if (d >= cols.size()) {
        throw DataError(DataErrc::kMissingColumn,
                        std::string(file) + ": column " + std::string(prefix) +
                            std::to_string(cols.size()) + " missing before " + h);
      }
    }
  }
  return cols;
}

void check_width(const io::CsvTable& t, std::size_t r, std::string_view file,
                 DataErrc code = DataErrc::kMalformedRow) {
  if (t.rows[r].size() != t.header.size()) {
    throw DataError(code,
                    std::string(file) + " line " + std::to_string(t.lines[r]) + ": expected " +
                        std::to_string(t.header.size()) + " fields, got " +
                        std::to_string(t.rows[r].size()));
  }
}

}  // namespace

std::vector<AssayCollection> parse_assay_tables_text(std::string_view assay_csv,
                                                     std::string_view measurement_csv) {
  constexpr std::string_view kAssays = "assays.csv";
  constexpr std::string_view kMeas = "measurements.csv";
  const auto at = io::parse_csv(assay_csv, false);
  const auto c_aid = at.column("assay_id", kAssays);
  const auto c_tid = at.column("target_id", kAssays);
  const auto c_desc = at.column("description", kAssays);
  const auto c_bao = at.column("bao_label", kAssays);

  std::vector<AssayRecord> records;
  std::map<std::string, std::size_t, std::less<>> by_id;
  for (std::size_t r = 0; r < at.rows.size(); ++r) {
    check_width(at, r, kAssays);
    const auto& row = at.rows[r];
    AssayRecord a;
    a.assay_id = row[c_aid];
    a.target_id = row[c_tid];
    a.description = row[c_desc];
    if (!row[c_bao].empty()) a.bao_label = row[c_bao];
    if (a.assay_id.empty()) {
      throw DataError(DataErrc::kMalformedRow,
                      std::string(kAssays) + " line " + std::to_string(at.lines[r]) + ": empty assay_id");
    }
    if (!by_id.emplace(a.assay_id, records.size()).second) {
      throw DataError(DataErrc::kDuplicateAssay, "assay id " + a.assay_id);
    }
    records.push_back(std::move(a));
  }

  const auto mt = io::parse_csv(measurement_csv, false);
  const auto c_maid = mt.column("assay_id", kMeas);
  const auto c_mol = mt.column("molecule_id", kMeas);
  const auto c_ic50 = mt.column("ic50_nM", kMeas);
  const auto fcols = feature_columns(mt.header, "f", kMeas);
  std::set<std::pair<std::string, std::string>, std::less<>> seen;
  for (std::size_t r = 0; r < mt.rows.size(); ++r) {
    check_width(mt, r, kMeas, DataErrc::kDimensionMismatch);
    const auto& row = mt.rows[r];
    const std::string where = std::string(kMeas) + " line " + std::to_string(mt.lines[r]);
    auto it = by_id.find(row[c_maid]);
    if (it == by_id.end()) {
      throw DataError(DataErrc::kDanglingAssay, where + ": assay " + row[c_maid] + " not in assays.csv");
    }
    if (!seen.emplace(row[c_maid], row[c_mol]).second) {
      throw DataError(DataErrc::kDuplicateRow, where + ": (" + row[c_maid] + ", " + row[c_mol] + ")");
    }
    const double ic50 = io::parse_double(row[c_ic50], where);
    if (!(ic50 > 0.0) || !std::isfinite(ic50)) {
      throw DataError(DataErrc::kNonPositiveIc50, where + ": ic50_nM = " + row[c_ic50]);
    }
    Vector f(static_cast<Eigen::Index>(fcols.size()));
    for (std::size_t d = 0; d < fcols.size(); ++d) {
      f[static_cast<Eigen::Index>(d)] = io::parse_double(row[fcols[d]], where);
    }
    records[it->second].measurements.push_back(make_measurement(row[c_mol], std::move(f), ic50));
  }

  std::map<std::string, std::vector<AssayRecord>> per_target;
  for (auto& a : records) {
    if (a.measurements.empty()) throw DataError(DataErrc::kEmptyAssay, "assay " + a.assay_id);
    per_target[a.target_id].push_back(std::move(a));
  }
  if (per_target.empty()) throw DataError(DataErrc::kEmptyCollection, "assays.csv has no rows");
  std::vector<AssayCollection> out;
  std::size_t dim = 0;
  bool have_dim = false;
  for (auto& [target, assays] : per_target) {
    out.push_back(AssayCollection::create(target, std::move(assays)));
    if (have_dim && out.back().feature_dim() != dim) {
      throw DataError(DataErrc::kDimensionMismatch, "feature dimension differs across targets");
    }
    dim = out.back().feature_dim();
    have_dim = true;
  }
  return out;
}

std::vector<AssayCollection> parse_assay_tables(const std::filesystem::path& assay_file,
                                                const std::filesystem::path& measurement_file) {
  return parse_assay_tables_text(io::read_file(assay_file), io::read_file(measurement_file));
}

std::pair<std::string, std::string> format_assay_tables(std::span<const AssayCollection> collections) {
  std::string assays = "assay_id,target_id,description,bao_label\n";
  std::string meas = "assay_id,molecule_id,ic50_nM";
  const std::size_t dim = collections.empty() ? 0 : collections.front().feature_dim();
  for (std::size_t d = 0; d < dim; ++d) meas += ",f" + std::to_string(d);
  meas += '\n';
  std::vector<std::string> fields;
  for (const auto& c : collections) {
    for (const auto& a : c.assays()) {
      fields = {a.assay_id, a.target_id, a.description, a.bao_label.value_or("")};
      io::append_csv_row(assays, fields);
      for (const auto& m : a.measurements) {
        fields = {a.assay_id, m.molecule_id, io::format_double(m.ic50_nm)};
        for (Eigen::Index d = 0; d < m.features.size(); ++d) {
          fields.push_back(io::format_double(m.features[d]));
        }
        io::append_csv_row(meas, fields);
      }
    }
  }
  return {std::move(assays), std::move(meas)};
}

void write_assay_tables(std::span<const AssayCollection> collections,
                        const std::filesystem::path& assay_file,
                        const std::filesystem::path& measurement_file) {
  auto [assays, meas] = format_assay_tables(collections);
  io::write_file(assay_file, assays);
  io::write_file(measurement_file, meas);
}

EmbeddingMap parse_embeddings_csv(std::string_view text, std::string_view source_name) {
  const auto t = io::parse_csv(text, true);
  const auto c_id = t.column("assay_id", source_name);
  const auto cols = feature_columns(t.header, "e", source_name);
  if (cols.empty()) {
    throw DataError(DataErrc::kMissingColumn, std::string(source_name) + ": no e0 column");
  }
  EmbeddingMap out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    check_width(t, r, source_name, DataErrc::kDimensionMismatch);
    const auto& row = t.rows[r];
    const std::string where = std::string(source_name) + " line " + std::to_string(t.lines[r]);
    EmbeddingRecord e;
    e.assay_id = row[c_id];
    e.raw.resize(static_cast<Eigen::Index>(cols.size()));
    for (std::size_t d = 0; d < cols.size(); ++d) {
      e.raw[static_cast<Eigen::Index>(d)] = io::parse_double(row[cols[d]], where);
    }
    if (!out.emplace(e.assay_id, e).second) {
      throw DataError(DataErrc::kDuplicateRow, where + ": embedding for " + e.assay_id);
    }
  }
  return out;
}

EmbeddingMap load_embeddings_file(const std::filesystem::path& path) {
  return parse_embeddings_csv(io::read_file(path), path.filename().string());
}

std::string format_embeddings_csv(const EmbeddingMap& embeddings, bool finetuned) {
  std::size_t dim = 0;
  for (const auto& [id, e] : embeddings) {
    const Vector* v = finetuned ? (e.finetuned ? &*e.finetuned : nullptr) : &e.raw;
    if (!v) throw DataError(DataErrc::kMissingEmbedding, "no finetuned vector for " + id);
    dim = static_cast<std::size_t>(v->size());
    break;
  }
  std::string out = "assay_id";
  for (std::size_t d = 0; d < dim; ++d) out += ",e" + std::to_string(d);
  out += '\n';
  std::vector<std::string> fields;
  for (const auto& [id, e] : embeddings) {
    const Vector* v = finetuned ? (e.finetuned ? &*e.finetuned : nullptr) : &e.raw;
    if (!v) throw DataError(DataErrc::kMissingEmbedding, "no finetuned vector for " + id);
    fields = {id};
    for (Eigen::Index d = 0; d < v->size(); ++d) fields.push_back(io::format_double((*v)[d]));
    io::append_csv_row(out, fields);
  }
  return out;
}

CollectionStats collection_stats(const AssayCollection& collection) {
  CollectionStats s;
  std::size_t actives = 0;
  for (const auto& a : collection.assays()) {
    s.assay_sizes.emplace_back(a.assay_id, a.measurements.size());
    s.measurement_count += a.measurements.size();
    for (const auto& m : a.measurements) actives += static_cast<std::size_t>(m.label);
  }
  s.assay_count = collection.size();
  s.active_fraction = static_cast<double>(actives) / static_cast<double>(s.measurement_count);
  return s;
}

}  // namespace assaysel
