#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "assaysel/core_data.hpp"
#include "assaysel/evaluation.hpp"

namespace assaysel {

// Every text artifact starts with this comment line; CSV readers skip it.
std::string artifact_stamp(std::string_view manifest_hash);
// Throws DataError(kManifestMismatch) unless `text` starts with the stamp
// for `manifest_hash`.
void check_artifact_stamp(std::string_view text, std::string_view manifest_hash,
                          const std::filesystem::path& source);

// target,strategy,split,run,architecture,split_seed,run_seed,fraction,auroc,train_measurements
// An undefined AUROC is an empty field.
std::string format_curve_csv(const LearningCurve& curve, std::string_view manifest_hash);
LearningCurve parse_curve_csv(std::string_view text, std::string_view manifest_hash,
                              const std::filesystem::path& source);

struct ReportMetadata {
  std::string manifest_hash;
  std::string pooling = "micro";
  std::string size_unit = "measurements";
  std::string architecture;
  std::vector<std::pair<std::string, CollectionStats>> targets;
};

std::string format_summary_json(const Summary& summary, const ReportMetadata& metadata);

// Mean learning curve per strategy for one target; bao-exact is drawn as a
// horizontal line labelled with its mean selected share.
std::string render_learning_curve_svg(std::string_view target_id, const Summary& summary,
                                      std::string_view manifest_hash);

}  // namespace assaysel
