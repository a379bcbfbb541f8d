#include "assaysel/embedding_provider.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "assaysel/error.hpp"

namespace assaysel {

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // without trailing slash
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw ConfigError("embedding provider base_url must include a scheme: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  SplitUrl out;
  out.origin = url.substr(0, path_start);
  out.path = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
  return out;
}

bool transient_status(int status) { return status == 429 || status >= 500; }

}  // namespace

HttpEmbeddingProvider::HttpEmbeddingProvider(EmbeddingProviderConfig config, Sleeper sleeper)
    : config_(std::move(config)), sleeper_(std::move(sleeper)) {
  if (config_.base_url.empty()) throw ConfigError("embedding provider base_url is empty");
  if (config_.batch_size == 0) throw ConfigError("embedding provider batch_size must be positive");
  if (config_.max_retries < 0) throw ConfigError("embedding provider max_retries must be >= 0");
  if (!sleeper_) {
    sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  }
  if (const char* tok = std::getenv(kEmbedTokenEnv); tok && *tok) token_ = tok;
}

std::chrono::milliseconds HttpEmbeddingProvider::backoff_delay(int attempt) const {
  const double ms = std::min(config_.backoff_max_ms,
                             config_.backoff_initial_ms * std::ldexp(1.0, attempt));
  return std::chrono::milliseconds(static_cast<long long>(ms));
}

std::vector<Vector> HttpEmbeddingProvider::embed(std::span<const std::string> texts) {
  std::vector<Vector> out;
  out.reserve(texts.size());
  for (std::size_t start = 0; start < texts.size(); start += config_.batch_size) {
    const auto n = std::min(config_.batch_size, texts.size() - start);
    auto batch = embed_batch(texts.subspan(start, n));
    for (auto& v : batch) out.push_back(std::move(v));
  }
  return out;
}

std::vector<Vector> HttpEmbeddingProvider::embed_batch(std::span<const std::string> texts) {
  const auto url = split_url(config_.base_url);
  httplib::Client client(url.origin);
  const auto timeout = std::chrono::duration<double>(config_.timeout_seconds);
  const auto sec = static_cast<time_t>(config_.timeout_seconds);
  const auto usec = static_cast<time_t>((timeout.count() - static_cast<double>(sec)) * 1e6);
  client.set_connection_timeout(sec, usec);
  client.set_read_timeout(sec, usec);
  client.set_write_timeout(sec, usec);
  httplib::Headers headers;
  if (token_) headers.emplace("Authorization", "Bearer " + *token_);

  const nlohmann::json request = {{"texts", std::vector<std::string>(texts.begin(), texts.end())}};
  const std::string body = request.dump();

  std::string last_error;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) sleeper_(backoff_delay(attempt - 1));
    auto res = client.Post(url.path + "/embed", headers, body, "application/json");
    if (!res) {
      last_error = "request failed: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "HTTP " + std::to_string(res->status);
      if (transient_status(res->status)) continue;
      throw DataError(DataErrc::kProviderHttp, last_error + " from " + config_.base_url);
    }
    nlohmann::json reply;
    try {
      reply = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(DataErrc::kProviderHttp, std::string("unparseable response: ") + e.what());
    }
    if (!reply.contains("embeddings") || !reply["embeddings"].is_array()) {
      throw DataError(DataErrc::kProviderHttp, "response has no 'embeddings' array");
    }
    const auto& rows = reply["embeddings"];
    if (rows.size() != texts.size()) {
      throw DataError(DataErrc::kProviderHttp,
                      "requested " + std::to_string(texts.size()) + " embeddings, got " +
                          std::to_string(rows.size()));
    }
    std::vector<Vector> out;
    out.reserve(rows.size());
    for (const auto& row : rows) {
      if (!row.is_array()) throw DataError(DataErrc::kProviderHttp, "embedding is not an array");
      Vector v(static_cast<Eigen::Index>(row.size()));
      for (std::size_t d = 0; d < row.size(); ++d) {
        if (!row[d].is_number()) throw DataError(DataErrc::kProviderHttp, "non-numeric embedding entry");
        v[static_cast<Eigen::Index>(d)] = row[d].get<double>();
      }
      out.push_back(std::move(v));
    }
    return out;
  }
  throw DataError(DataErrc::kProviderHttp,
                  last_error + " after " + std::to_string(config_.max_retries + 1) + " attempts");
}

EmbeddingMap fetch_embeddings(EmbeddingProvider& provider, const AssayCollection& collection,
                              std::optional<std::size_t> expected_dim) {
  std::vector<std::string> texts;
  texts.reserve(collection.size());
  for (const auto& a : collection.assays()) texts.push_back(a.description);
  auto vectors = provider.embed(texts);
  if (vectors.size() != texts.size()) {
    throw DataError(DataErrc::kProviderHttp, "provider returned a different number of vectors");
  }
  EmbeddingMap out;
  std::optional<std::size_t> dim = expected_dim;
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    const auto& a = collection.assays()[i];
    const auto d = static_cast<std::size_t>(vectors[i].size());
    if (!dim) dim = d;
    if (d != *dim) {
      throw DataError(DataErrc::kDimensionMismatch,
                      "embedding for " + a.assay_id + " has length " + std::to_string(d) +
                          ", expected " + std::to_string(*dim));
    }
    out.emplace(a.assay_id, EmbeddingRecord{a.assay_id, std::move(vectors[i]), std::nullopt});
  }
  return out;
}

EmbeddingMap load_embeddings(const EmbeddingSource& source, const AssayCollection& collection) {
  if (const auto* http = std::get_if<EmbeddingHttpSource>(&source)) {
    HttpEmbeddingProvider provider(http->config);
    return fetch_embeddings(provider, collection, http->config.expected_dim);
  }
  const auto& file = std::get<EmbeddingFileSource>(source);
  auto all = load_embeddings_file(file.path);
  EmbeddingMap out;
  std::optional<std::size_t> dim;
  for (const auto& a : collection.assays()) {
    auto it = all.find(a.assay_id);
    if (it == all.end()) {
      throw DataError(DataErrc::kMissingEmbedding,
                      "assay " + a.assay_id + " not in " + file.path.string());
    }
    const auto d = static_cast<std::size_t>(it->second.raw.size());
    if (dim && *dim != d) throw DataError(DataErrc::kDimensionMismatch, "embedding " + a.assay_id);
    dim = d;
    out.insert(all.extract(it));
  }
  return out;
}

}  // namespace assaysel
