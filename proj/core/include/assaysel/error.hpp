#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace assaysel {

// Three families map onto the CLI's exit codes: bad configuration, bad
// input data, and numerical/compute failures.

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DataErrc {
  kMissingColumn,
  kMalformedRow,
  kNonPositiveIc50,
  kDimensionMismatch,
  kDanglingAssay,
  kDuplicateRow,
  kDuplicateAssay,
  kEmptyAssay,
  kMixedTargets,
  kMissingEmbedding,
  kUnknownAssay,
  kEmptyCollection,
  kProviderHttp,
  kIo,
  kManifestMismatch,
  kSplitLeak,
};

std::string_view to_string(DataErrc code);

class DataError : public std::runtime_error {
 public:
  DataError(DataErrc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  DataErrc code() const noexcept { return code_; }

 private:
  DataErrc code_;
};

class ComputeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised by the CLI when a stage runs before the stage it depends on.
class MissingStageError : public std::runtime_error {
 public:
  MissingStageError(std::string required, const std::string& what)
      : std::runtime_error(what), required_(std::move(required)) {}

  const std::string& required_stage() const noexcept { return required_; }

 private:
  std::string required_;
};

}  // namespace assaysel
