#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "assaysel/attribution.hpp"
#include "assaysel/embedding_provider.hpp"
#include "assaysel/evaluation.hpp"
#include "assaysel/finetune.hpp"
#include "assaysel/predictor.hpp"
#include "assaysel/selection.hpp"
#include "assaysel/synthdata.hpp"

namespace assaysel {

enum class DataSource { kSynth, kFiles };
enum class EmbeddingSourceKind { kFile, kHttp };

struct DataConfig {
  DataSource source = DataSource::kSynth;
  // Resolved against the config file's directory.
  std::filesystem::path assays;
  std::filesystem::path measurements;
  EmbeddingSourceKind embeddings_from = EmbeddingSourceKind::kFile;
  std::filesystem::path embeddings;
  EmbeddingProviderConfig provider;
};

struct SynthConfig {
  WorldConfig world;
  // Targets SYN1..SYNn, each generated from its own derived seed.
  std::size_t n_targets = 1;
};

struct SelectConfig {
  std::vector<StrategyKind> strategies = {StrategyKind::kAssayMatch, StrategyKind::kRawEmbedding,
                                          StrategyKind::kRandom, StrategyKind::kBaoExact};
  SizeUnit unit = SizeUnit::kMeasurements;
  bool normalize_raw = false;
};

struct EvaluateConfig {
  std::size_t n_splits = 15;
  std::size_t n_runs = 5;
  SplitConfig split;
  std::vector<double> fractions = default_fractions();
  bool macro = false;
  std::string reference = "random";
};

struct AnalysisConfig {
  std::size_t k = 8;
  std::size_t pca_dims = 2;
  std::size_t top_shift_pairs = 20;
  bool normalize_raw = true;
  // Fraction at which selections are compared by size-weighted TRAK.
  double selection_fraction = 0.1;
};

/// Everything a run needs. Defaults follow the method's published settings
/// where it states them (margin 0.1, lr 1e-4, batch 512, 10 epochs, k = 8,
/// fractions 0.1-1.0, 15 splits x 5 runs).
struct RunConfig {
  std::uint64_t seed = 0;
  std::optional<std::string> target;
  DataConfig data;
  SynthConfig synth;
  TrainConfig predictor;
  TrakConfig trak;
  FinetuneConfig finetune;
  SelectConfig select;
  EvaluateConfig evaluate;
  AnalysisConfig analysis;

  void validate() const;
};

// INI text with sections [run], [data], [synth], [predictor], [trak],
// [finetune], [select], [evaluate], [analysis]. Unknown sections or keys
// are rejected.
RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir);
RunConfig load_config(const std::filesystem::path& path);

// Fully resolved configuration in a fixed key order; parse_config of this
// text reproduces the configuration. Run-time knobs that cannot change
// results (worker count) are not part of it.
std::string canonical_config_text(const RunConfig& config);

}  // namespace assaysel
