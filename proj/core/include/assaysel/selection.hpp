#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "assaysel/core_data.hpp"
#include "assaysel/finetune.hpp"

namespace assaysel {

enum class StrategyKind { kAssayMatch, kRawEmbedding, kRandom, kBaoExact };

std::string_view to_string(StrategyKind kind);
StrategyKind parse_strategy(std::string_view name);

struct SelectionStrategy {
  StrategyKind kind = StrategyKind::kAssayMatch;
  // Required for kRandom, ignored otherwise.
  std::optional<std::uint64_t> seed;
  // kRawEmbedding only: rank by cosine instead of the plain dot product.
  bool normalize_raw = false;
};

/// What selection may know about an assay: its text metadata and embedding.
/// There is deliberately no route from here to measurements or labels.
struct AssayDescriptor {
  std::string assay_id;
  std::string description;
  std::optional<std::string> bao_label;
  Vector raw_embedding;

  static AssayDescriptor of(const AssayRecord& assay, const EmbeddingRecord& embedding);
};

struct CandidateAssay {
  AssayDescriptor descriptor;
  std::size_t measurement_count = 0;
};

struct RankedEntry {
  std::string assay_id;
  double score = 0.0;
  std::size_t cum_measurements = 0;
};

struct RankedSelection {
  std::string test_assay_id;
  StrategyKind strategy = StrategyKind::kAssayMatch;
  std::vector<RankedEntry> entries;
  // Sum of measurement counts over every candidate, selected or not.
  std::size_t total_measurements = 0;
  // kBaoExact: entries form one fixed set, not a ranking.
  bool fixed_set = false;
  std::vector<std::string> warnings;
};

// f(e_i) . f(e_test) on unit vectors.
double assay_match_score(const Vector& finetuned_train, const Vector& finetuned_test);

// Ranks `candidates` for `test`. Ties go to the smaller assay id. The test
// assay's description may not occur among the candidates (kSplitLeak).
// `head` is required for kAssayMatch.
RankedSelection rank_training_assays(const SelectionStrategy& strategy, const AssayDescriptor& test,
                                     std::span<const CandidateAssay> candidates,
                                     const HeadParams* head = nullptr);

enum class SizeUnit { kMeasurements, kAssays };

// Whole assays in rank order until the cumulative size first reaches
// fraction * total. Fixed sets are returned whole for any fraction.
std::vector<std::string> select_subset(const RankedSelection& ranking, double fraction,
                                       SizeUnit unit = SizeUnit::kMeasurements);

// rank,assay_id,score,cum_measurements
std::string format_ranked_selection_csv(const RankedSelection& selection);

}  // namespace assaysel
