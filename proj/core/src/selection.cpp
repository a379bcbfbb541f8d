#include "assaysel/selection.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "assaysel/error.hpp"
#include "assaysel/io.hpp"
#include "assaysel/rng.hpp"

namespace assaysel {

std::string_view to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::kAssayMatch: return "assaymatch";
    case StrategyKind::kRawEmbedding: return "raw-embedding";
    case StrategyKind::kRandom: return "random";
    case StrategyKind::kBaoExact: return "bao-exact";
  }
  return "unknown";
}

StrategyKind parse_strategy(std::string_view name) {
  if (name == "assaymatch") return StrategyKind::kAssayMatch;
  if (name == "raw-embedding") return StrategyKind::kRawEmbedding;
  if (name == "random") return StrategyKind::kRandom;
  if (name == "bao-exact") return StrategyKind::kBaoExact;
  throw ConfigError("unknown selection strategy '" + std::string(name) + "'");
}

AssayDescriptor AssayDescriptor::of(const AssayRecord& assay, const EmbeddingRecord& embedding) {
  return {assay.assay_id, assay.description, assay.bao_label, embedding.raw};
}

double assay_match_score(const Vector& finetuned_train, const Vector& finetuned_test) {
  if (finetuned_train.size() != finetuned_test.size()) {
    throw DataError(DataErrc::kDimensionMismatch, "finetuned embeddings differ in dimension");
  }
  return finetuned_train.dot(finetuned_test);
}

namespace {

void sort_and_accumulate(RankedSelection& out, std::span<const CandidateAssay> candidates,
                         std::vector<std::pair<double, std::size_t>> scored) {
  std::sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return candidates[a.second].descriptor.assay_id < candidates[b.second].descriptor.assay_id;
  });
  std::size_t cum = 0;
  for (const auto& [score, idx] : scored) {
    cum += candidates[idx].measurement_count;
    out.entries.push_back({candidates[idx].descriptor.assay_id, score, cum});
  }
}

}  // namespace

RankedSelection rank_training_assays(const SelectionStrategy& strategy, const AssayDescriptor& test,
                                     std::span<const CandidateAssay> candidates,
                                     const HeadParams* head) {
  if (candidates.empty()) throw ComputeError("no training assays to rank for " + test.assay_id);
  const auto test_key = description_key(test.description);
  for (const auto& c : candidates) {
    if (c.descriptor.assay_id == test.assay_id || description_key(c.descriptor.description) == test_key) {
      throw DataError(DataErrc::kSplitLeak,
                      "training assay " + c.descriptor.assay_id + " shares the description of test assay " +
                          test.assay_id);
    }
  }

  RankedSelection out;
  out.test_assay_id = test.assay_id;
  out.strategy = strategy.kind;
  for (const auto& c : candidates) out.total_measurements += c.measurement_count;

  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(candidates.size());
  switch (strategy.kind) {
    case StrategyKind::kAssayMatch: {
      if (!head) throw ComputeError("assaymatch selection needs a finetuned head");
      const Vector q = embed(*head, test.raw_embedding);
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        scored.emplace_back(assay_match_score(embed(*head, candidates[i].descriptor.raw_embedding), q), i);
      }
      break;
    }
    case StrategyKind::kRawEmbedding: {
      const Vector& q = test.raw_embedding;
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        const Vector& e = candidates[i].descriptor.raw_embedding;
        if (e.size() != q.size()) {
          throw DataError(DataErrc::kDimensionMismatch, "raw embeddings differ in dimension");
        }
        double s = e.dot(q);
        if (strategy.normalize_raw) s /= std::max(e.norm() * q.norm(), 1e-300);
        scored.emplace_back(s, i);
      }
      break;
    }
    case StrategyKind::kRandom: {
      if (!strategy.seed) throw ConfigError("random selection requires a seed");
      // Keys are drawn in assay-id order so the permutation does not depend
      // on the order candidates are passed in.
      std::vector<std::size_t> by_id(candidates.size());
      for (std::size_t i = 0; i < by_id.size(); ++i) by_id[i] = i;
      std::sort(by_id.begin(), by_id.end(), [&](auto a, auto b) {
        return candidates[a].descriptor.assay_id < candidates[b].descriptor.assay_id;
      });
      Rng rng(*strategy.seed);
      for (auto i : by_id) scored.emplace_back(rng.uniform(), i);
      break;
    }
    case StrategyKind::kBaoExact: {
      if (!test.bao_label || test.bao_label->empty()) {
        throw DataError(DataErrc::kMalformedRow,
                        "bao-exact selection: test assay " + test.assay_id + " has no BAO label");
      }
      out.fixed_set = true;
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (candidates[i].descriptor.bao_label == test.bao_label) scored.emplace_back(1.0, i);
      }
      if (scored.empty()) {
        out.warnings.push_back("no training assay shares BAO label '" + *test.bao_label +
                               "' with test assay " + test.assay_id);
      }
      break;
    }
  }
  sort_and_accumulate(out, candidates, std::move(scored));
  return out;
}

std::vector<std::string> select_subset(const RankedSelection& ranking, double fraction, SizeUnit unit) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("selection fraction must be in (0, 1]");
  }
  std::vector<std::string> out;
  if (ranking.fixed_set || fraction >= 1.0) {
    for (const auto& e : ranking.entries) out.push_back(e.assay_id);
    return out;
  }
  // Integer thresholds avoid 0.3 * 100 = 30.000000000000004 style misses.
  const double total = unit == SizeUnit::kMeasurements
                           ? static_cast<double>(ranking.total_measurements)
                           : static_cast<double>(ranking.entries.size());
  const auto needed = static_cast<std::size_t>(std::ceil(fraction * total - 1e-9));
  std::size_t have = 0;
  for (std::size_t i = 0; i < ranking.entries.size() && have < needed; ++i) {
    out.push_back(ranking.entries[i].assay_id);
    have = unit == SizeUnit::kMeasurements ? ranking.entries[i].cum_measurements : i + 1;
  }
  return out;
}

std::string format_ranked_selection_csv(const RankedSelection& selection) {
  std::string out = "rank,assay_id,score,cum_measurements\n";
  std::vector<std::string> fields;
  for (std::size_t i = 0; i < selection.entries.size(); ++i) {
    const auto& e = selection.entries[i];
    fields = {std::to_string(i + 1), e.assay_id, io::format_double(e.score),
              std::to_string(e.cum_measurements)};
    io::append_csv_row(out, fields);
  }
  return out;
}

}  // namespace assaysel
