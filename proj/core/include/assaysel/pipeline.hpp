#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "assaysel/attribution.hpp"
#include "assaysel/config.hpp"
#include "assaysel/evaluation.hpp"
#include "assaysel/finetune.hpp"

namespace assaysel {

enum class Stage { kSynth, kTrak, kFinetune, kSelect, kEvaluate, kAnalyze, kReport };

inline constexpr std::array<Stage, 7> kAllStages = {Stage::kSynth,    Stage::kTrak,    Stage::kFinetune,
                                                    Stage::kSelect,   Stage::kEvaluate, Stage::kAnalyze,
                                                    Stage::kReport};

std::string_view to_string(Stage stage);
Stage parse_stage(std::string_view name);

// Hash of the canonical configuration text; stamped into every artifact.
std::string manifest_hash(const RunConfig& config);

// Seed helpers shared by the pipeline and the test harnesses.
std::uint64_t target_tag(std::string_view target_id);

// TRAK over one split: rows are the split's train assays, columns its train
// assays followed by its test assays. Molecule-level scores are returned
// through `molecules` when non-null.
AssayTrakMatrix split_assay_trak(const AssayCollection& collection, const SplitSpec& split,
                                 const TrakConfig& config, TrakMatrix* molecules = nullptr);

// The train x train block of a split's assay TRAK matrix.
AssayTrakMatrix train_block(const AssayTrakMatrix& matrix);

struct SplitFinetuneInput {
  std::vector<AnchorRanking> rankings;
  RawEmbeddings raw;
};

// Anchor rankings from the train block plus the train assays' raw vectors.
SplitFinetuneInput finetune_input(const AssayCollection& collection, const SplitSpec& split,
                                  const AssayTrakMatrix& train_trak);

struct RunOptions {
  std::filesystem::path run_dir;
  std::size_t jobs = 1;
  bool force = false;
};

struct StageOutcome {
  Stage stage = Stage::kSynth;
  bool skipped = false;
};

/// Runs stages against a run directory:
///
///   manifest.json                     config snapshot, hash, completed stages
///   data/{assays,measurements,embeddings}.csv, data/splits_{target}.json
///   trak/{target}/split{i}_assay.csv  per-assay TRAK (train x split assays)
///   trak/{target}/split0.trakmat      molecule-level matrix of the first split
///   finetune/{scope}/split{i}.head.*  head checkpoint; scope is the target
///                                     or "joint"
///   finetune/{target}/split{i}_embeddings.csv
///   select/{target}/{strategy}/split{i}[_run{j}]_{test}.csv
///   results/{target}/{strategy}/curve_split{i}_run{j}.csv
///   results/summary.json, results/{target}/curves.svg
///   analysis/{target}/...
///
/// A completed stage is skipped unless `force` is set; rerunning a stage
/// invalidates the stages after it.
class Pipeline {
 public:
  Pipeline(RunConfig config, RunOptions options);

  StageOutcome run(Stage stage);
  std::vector<StageOutcome> run_all();

  const std::string& manifest_hash() const { return hash_; }
  const RunConfig& config() const { return config_; }
  bool is_complete(Stage stage) const;

 private:
  void run_synth();
  void run_trak();
  void run_finetune();
  void run_select();
  void run_evaluate();
  void run_analyze();
  void run_report();

  std::vector<AssayCollection> load_collections() const;
  std::vector<SplitSpec> load_splits(const std::string& target) const;
  AssayTrakMatrix load_assay_trak(const std::string& target, std::size_t split) const;
  HeadParams load_split_head(const std::string& target, std::size_t split) const;
  std::filesystem::path head_stem(const std::string& target, std::size_t split) const;
  std::uint64_t run_seed(const std::string& target, std::size_t split, std::size_t run) const;

  void write_manifest() const;
  std::filesystem::path path(const std::filesystem::path& relative) const;

  RunConfig config_;
  RunOptions options_;
  std::string hash_;
  std::vector<Stage> completed_;
};

}  // namespace assaysel
