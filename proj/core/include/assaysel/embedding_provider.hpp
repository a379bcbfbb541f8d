#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "assaysel/core_data.hpp"

namespace assaysel {

// HTTP JSON contract:
//   POST {base_url}/embed   {"texts": ["...", ...]}
//   200                     {"embeddings": [[...], ...]}
// A bearer token is sent when EMBED_API_TOKEN is set.
struct EmbeddingProviderConfig {
  std::string base_url;
  std::size_t batch_size = 64;
  double timeout_seconds = 30.0;
  int max_retries = 4;
  double backoff_initial_ms = 250.0;
  double backoff_max_ms = 8000.0;
  std::optional<std::size_t> expected_dim;
};

inline constexpr const char* kEmbedTokenEnv = "EMBED_API_TOKEN";

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::vector<Vector> embed(std::span<const std::string> texts) = 0;
};

class HttpEmbeddingProvider final : public EmbeddingProvider {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  explicit HttpEmbeddingProvider(EmbeddingProviderConfig config, Sleeper sleeper = {});

  // Splits `texts` into batches; each batch is retried on connection
  // failures, 429 and 5xx with exponential backoff capped at
  // backoff_max_ms. Other statuses fail immediately.
  std::vector<Vector> embed(std::span<const std::string> texts) override;

  // Delay before retry `attempt` (0-based).
  std::chrono::milliseconds backoff_delay(int attempt) const;

 private:
  std::vector<Vector> embed_batch(std::span<const std::string> texts);

  EmbeddingProviderConfig config_;
  Sleeper sleeper_;
  std::optional<std::string> token_;
};

struct EmbeddingFileSource {
  std::filesystem::path path;
};

struct EmbeddingHttpSource {
  EmbeddingProviderConfig config;
};

using EmbeddingSource = std::variant<EmbeddingFileSource, EmbeddingHttpSource>;

// Embeds one description per assay via `provider` and checks that every
// vector has the same length (and `expected_dim`, when given).
EmbeddingMap fetch_embeddings(EmbeddingProvider& provider, const AssayCollection& collection,
                              std::optional<std::size_t> expected_dim = std::nullopt);

// Returns exactly the collection's assays; an assay absent from the source
// is a kMissingEmbedding error. Extra rows in a file are ignored so that a
// shared embedding file can serve several targets.
EmbeddingMap load_embeddings(const EmbeddingSource& source, const AssayCollection& collection);

}  // namespace assaysel
