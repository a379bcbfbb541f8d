#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <thread>

// Eigen first: httplib pulls in <resolv.h>, whose _res macro breaks Eigen.
#include "assaysel/embedding_provider.hpp"
#include "assaysel/error.hpp"
#include "builders.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

using namespace assaysel;
using testing_support::assay;

namespace {

// In-process stand-in for a vendor endpoint. The first `failures` requests
// get `fail_status`; after that each text maps to [len(text), dim-1 zeros].
class FakeEmbedServer {
 public:
  FakeEmbedServer() {
    server_.Post("/v1/embed", [this](const httplib::Request& req, httplib::Response& res) {
      const int n = ++requests_;
      last_auth_ = req.get_header_value("Authorization");
      if (n <= failures_) {
        res.status = fail_status_;
        return;
      }
      const auto body = nlohmann::json::parse(req.body);
      nlohmann::json out = nlohmann::json::array();
      for (const auto& t : body["texts"]) {
        std::vector<double> v(static_cast<std::size_t>(dim_), 0.0);
        v[0] = static_cast<double>(t.get<std::string>().size());
        out.push_back(v);
      }
      if (drop_one_ && !out.empty()) out.erase(out.size() - 1);
      if (short_vector_ && !out.empty()) out[0] = std::vector<double>{1.0};
      res.set_content(nlohmann::json{{"embeddings", out}}.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeEmbedServer() {
    server_.stop();
    thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

  std::atomic<int> requests_{0};
  int failures_ = 0;
  int fail_status_ = 503;
  int dim_ = 3;
  bool drop_one_ = false;
  bool short_vector_ = false;
  std::string last_auth_;

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

EmbeddingProviderConfig config_for(const FakeEmbedServer& s) {
  EmbeddingProviderConfig c;
  c.base_url = s.url();
  c.batch_size = 2;
  c.timeout_seconds = 5.0;
  c.max_retries = 3;
  c.backoff_initial_ms = 100;
  c.backoff_max_ms = 250;
  return c;
}

}  // namespace

TEST(HttpEmbeddingProvider, BatchesRequests) {
  FakeEmbedServer server;
  std::vector<std::chrono::milliseconds> sleeps;
  HttpEmbeddingProvider p(config_for(server), [&](auto d) { sleeps.push_back(d); });
  const std::vector<std::string> texts{"a", "bb", "ccc", "dddd", "eeeee"};
  const auto v = p.embed(texts);
  ASSERT_EQ(v.size(), 5u);
  EXPECT_EQ(v[3][0], 4.0);
  EXPECT_EQ(server.requests_, 3);
  EXPECT_TRUE(sleeps.empty());
}

TEST(HttpEmbeddingProvider, RetriesTransientFailuresWithCappedBackoff) {
  FakeEmbedServer server;
  server.failures_ = 3;
  std::vector<std::chrono::milliseconds> sleeps;
  HttpEmbeddingProvider p(config_for(server), [&](auto d) { sleeps.push_back(d); });
  const std::vector<std::string> texts{"xy"};
  EXPECT_EQ(p.embed(texts)[0][0], 2.0);
  EXPECT_EQ(server.requests_, 4);
  ASSERT_EQ(sleeps.size(), 3u);
  EXPECT_EQ(sleeps[0].count(), 100);
  EXPECT_EQ(sleeps[1].count(), 200);
  EXPECT_EQ(sleeps[2].count(), 250);
}

TEST(HttpEmbeddingProvider, GivesUpAfterRetries) {
  FakeEmbedServer server;
  server.failures_ = 100;
  server.fail_status_ = 429;
  HttpEmbeddingProvider p(config_for(server), [](auto) {});
  const std::vector<std::string> texts{"x"};
  try {
    p.embed(texts);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.code(), DataErrc::kProviderHttp);
  }
  EXPECT_EQ(server.requests_, 4);
}

TEST(HttpEmbeddingProvider, ClientErrorsAreNotRetried) {
  FakeEmbedServer server;
  server.failures_ = 1;
  server.fail_status_ = 400;
  HttpEmbeddingProvider p(config_for(server), [](auto) {});
  const std::vector<std::string> texts{"x"};
  EXPECT_THROW(p.embed(texts), DataError);
  EXPECT_EQ(server.requests_, 1);
}

TEST(HttpEmbeddingProvider, WrongCountIsAnError) {
  FakeEmbedServer server;
  server.drop_one_ = true;
  HttpEmbeddingProvider p(config_for(server), [](auto) {});
  const std::vector<std::string> texts{"x", "y"};
  EXPECT_THROW(p.embed(texts), DataError);
}

TEST(HttpEmbeddingProvider, SendsBearerToken) {
  FakeEmbedServer server;
  ::setenv(kEmbedTokenEnv, "s3cret", 1);
  HttpEmbeddingProvider p(config_for(server), [](auto) {});
  ::unsetenv(kEmbedTokenEnv);
  const std::vector<std::string> texts{"x"};
  p.embed(texts);
  EXPECT_EQ(server.last_auth_, "Bearer s3cret");
}

TEST(HttpEmbeddingProvider, UnreachableHostFailsAfterRetries) {
  EmbeddingProviderConfig c;
  c.base_url = "http://127.0.0.1:1";
  c.max_retries = 2;
  c.timeout_seconds = 1.0;
  int sleeps = 0;
  HttpEmbeddingProvider p(c, [&](auto) { ++sleeps; });
  const std::vector<std::string> texts{"x"};
  EXPECT_THROW(p.embed(texts), DataError);
  EXPECT_EQ(sleeps, 2);
}

TEST(HttpEmbeddingProvider, RejectsBadConfig) {
  EXPECT_THROW(HttpEmbeddingProvider(EmbeddingProviderConfig{}), ConfigError);
  EmbeddingProviderConfig c;
  c.base_url = "no-scheme";
  HttpEmbeddingProvider p(c);
  const std::vector<std::string> texts{"x"};
  EXPECT_THROW(p.embed(texts), ConfigError);
}

TEST(FetchEmbeddings, WrongLengthVectorIsDimensionError) {
  FakeEmbedServer server;
  server.short_vector_ = true;
  HttpEmbeddingProvider p(config_for(server), [](auto) {});
  const auto c = AssayCollection::create("T1", {assay("A", 1), assay("B", 1)});
  try {
    fetch_embeddings(p, c);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.code(), DataErrc::kDimensionMismatch);
  }
}

TEST(FetchEmbeddings, ExpectedDimensionIsEnforced) {
  FakeEmbedServer server;
  HttpEmbeddingProvider p(config_for(server), [](auto) {});
  const auto c = AssayCollection::create("T1", {assay("A", 1), assay("B", 1)});
  const auto m = fetch_embeddings(p, c, 3);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m.at("A").raw.size(), 3);
  EXPECT_NO_THROW((void)c.with_embeddings(m));
  EXPECT_THROW(fetch_embeddings(p, c, 768), DataError);
}

TEST(FetchEmbeddings, ThroughEmbeddingSource) {
  FakeEmbedServer server;
  const auto c = AssayCollection::create("T1", {assay("A", 1, "abc"), assay("B", 1, "abcdefg")});
  auto cfg = config_for(server);
  cfg.expected_dim = 3;
  const auto m = load_embeddings(EmbeddingHttpSource{cfg}, c);
  EXPECT_EQ(m.at("B").raw[0], 7.0);
}
