#include "assaysel/error.hpp"

namespace assaysel {

std::string_view to_string(DataErrc code) {
  switch (code) {
    case DataErrc::kMissingColumn: return "missing column";
    case DataErrc::kMalformedRow: return "malformed row";
    case DataErrc::kNonPositiveIc50: return "non-positive IC50";
    case DataErrc::kDimensionMismatch: return "dimension mismatch";
    case DataErrc::kDanglingAssay: return "dangling assay reference";
    case DataErrc::kDuplicateRow: return "duplicate row";
    case DataErrc::kDuplicateAssay: return "duplicate assay";
    case DataErrc::kEmptyAssay: return "assay without measurements";
    case DataErrc::kMixedTargets: return "mixed targets";
    case DataErrc::kMissingEmbedding: return "missing embedding";
    case DataErrc::kUnknownAssay: return "unknown assay";
    case DataErrc::kEmptyCollection: return "empty collection";
    case DataErrc::kProviderHttp: return "embedding provider error";
    case DataErrc::kIo: return "i/o error";
    case DataErrc::kManifestMismatch: return "manifest mismatch";
    case DataErrc::kSplitLeak: return "test description present in training split";
  }
  return "data error";
}

}  // namespace assaysel
