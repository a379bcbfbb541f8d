#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "assaysel/error.hpp"
#include "assaysel/finetune.hpp"
#include "assaysel/rng.hpp"
#include "builders.hpp"
#include "oracles.hpp"

using namespace assaysel;
using testing_support::vec;

namespace {

FinetuneConfig small_config() {
  FinetuneConfig c;
  c.hidden_dim = 8;
  c.output_dim = 4;
  c.triplets_per_anchor = 40;
  c.seed = 1;
  return c;
}

RawEmbeddings random_raw(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  RawEmbeddings out;
  for (std::size_t i = 0; i < n; ++i) {
    Vector v(static_cast<Eigen::Index>(dim));
    for (auto& x : v) x = rng.normal();
    out.emplace("A" + std::to_string(i), v);
  }
  return out;
}

}  // namespace

TEST(SampleTriplets, PositivesFromTopHalf) {
  const std::vector<AnchorRanking> r{{"X", {"a", "b", "c", "d"}}, {"Y", {"p", "q", "r"}}};
  const auto s = sample_triplets(r, small_config());
  ASSERT_EQ(s.triplets.size(), 80u);
  std::set<std::string> pos_x, neg_x, pos_y, neg_y;
  for (const auto& t : s.triplets) {
    if (t.anchor == "X") {
      pos_x.insert(t.positive);
      neg_x.insert(t.negative);
    } else {
      pos_y.insert(t.positive);
      neg_y.insert(t.negative);
    }
  }
  EXPECT_EQ(pos_x, (std::set<std::string>{"a", "b"}));
  EXPECT_EQ(neg_x, (std::set<std::string>{"c", "d"}));
  EXPECT_EQ(pos_y, (std::set<std::string>{"p", "q"}));
  EXPECT_EQ(neg_y, (std::set<std::string>{"r"}));
}

TEST(SampleTriplets, DeterministicAndSkipsShortRankings) {
  const std::vector<AnchorRanking> r{{"X", {"a", "b", "c"}}, {"Y", {"p"}}, {"Z", {}}};
  const auto a = sample_triplets(r, small_config());
  EXPECT_EQ(a.triplets, sample_triplets(r, small_config()).triplets);
  EXPECT_EQ(a.skipped_anchors, (std::vector<std::string>{"Y", "Z"}));
  auto other = small_config();
  other.seed = 2;
  EXPECT_NE(a.triplets, sample_triplets(r, other).triplets);
  EXPECT_THROW(sample_triplets({}, small_config()), ComputeError);
}

TEST(TripletLoss, HingeExamples) {
  EXPECT_DOUBLE_EQ(triplet_loss(0.2, 0.5, 0.1), 0.0);
  EXPECT_NEAR(triplet_loss(0.5, 0.2, 0.1), 0.4, 1e-15);
  // Collapsed embeddings cost exactly the margin.
  EXPECT_DOUBLE_EQ(triplet_loss(0.0, 0.0, 0.3), 0.3);
}

TEST(Head, IdentityHeadNormalizes) {
  const auto h = HeadParams::identity(3);
  EXPECT_EQ(h.hidden_dim, 6u);
  const Vector x = vec({3, -4, 0});
  EXPECT_LT((embed(h, x) - x.normalized()).norm(), 1e-15);
  EXPECT_THROW(embed(h, vec({0, 0, 0})), ComputeError);
  EXPECT_THROW(embed(h, vec({1, 2})), DataError);
}

TEST(Head, OutputsAreUnitVectors) {
  const auto h = HeadParams::init(5, 32, 3, 9);
  EXPECT_EQ(h.theta.size(), static_cast<Eigen::Index>(HeadParams::parameter_count(5, 32, 3)));
  for (const auto& [id, v] : random_raw(50, 5, 4)) EXPECT_NEAR(embed(h, v).norm(), 1.0, 1e-12);
}

TEST(Head, ZeroEpochsKeepsInitialization) {
  const auto raw = random_raw(6, 5, 2);
  std::vector<Triplet> t{{"A0", "A1", "A2"}};
  auto c = small_config();
  c.epochs = 0;
  const auto r = train_head(raw, t, c);
  EXPECT_EQ(r.head.theta, HeadParams::init(5, 8, 4, c.seed).theta);
  EXPECT_EQ(r.loss_history.size(), 1u);
  EXPECT_THROW(train_head(raw, {}, c), ComputeError);
}

TEST(Head, GradientMatchesFiniteDifferences) {
  const auto raw = random_raw(8, 5, 3);
  const std::vector<Triplet> t{{"A0", "A1", "A2"}, {"A3", "A4", "A5"}, {"A6", "A7", "A0"}};
  const auto h0 = HeadParams::init(5, 6, 4, 7);
  // A large margin keeps every hinge active.
  constexpr double kMargin = 3.0;
  const auto g = triplet_loss_grad(h0, raw, t, kMargin);
  EXPECT_NEAR(g.loss, mean_triplet_loss(h0, raw, t, kMargin), 1e-14);
  const auto fd = oracle::central_difference(
      [&](const Vector& theta) {
        auto h = h0;
        h.theta = theta;
        return mean_triplet_loss(h, raw, t, kMargin);
      },
      h0.theta);
  EXPECT_LT(oracle::relative_error(g.grad, fd), 1e-6);
}

TEST(Head, TrainingReducesLoss) {
  const auto raw = random_raw(12, 6, 5);
  std::vector<AnchorRanking> r;
  for (const auto& [a, _] : raw) {
    AnchorRanking ranking{a, {}};
    for (const auto& [b, __] : raw) {
      if (a != b) ranking.second.push_back(b);
    }
    // Arbitrary but fixed target order: by id.
    r.push_back(std::move(ranking));
  }
  auto c = small_config();
  c.learning_rate = 1e-2;
  c.batch_size = 32;
  c.epochs = 30;
  const auto s = sample_triplets(r, c);
  const auto out = train_head(raw, s.triplets, c);
  ASSERT_EQ(out.loss_history.size(), 31u);
  EXPECT_LT(out.loss_history.back(), out.loss_history.front());
  EXPECT_EQ(out.head.theta, train_head(raw, s.triplets, c).head.theta);
}

TEST(Head, Satisfaction) {
  RawEmbeddings raw{{"a", vec({1, 0})}, {"p", vec({1, 0.1})}, {"n", vec({0, 1})}};
  const std::vector<Triplet> good{{"a", "p", "n"}};
  const std::vector<Triplet> bad{{"a", "n", "p"}};
  const auto h = HeadParams::identity(2);
  EXPECT_EQ(triplet_satisfaction(h, raw, good), 1.0);
  EXPECT_EQ(triplet_satisfaction(h, raw, bad), 0.0);
  const std::vector<Triplet> missing{{"a", "p", "zzz"}};
  EXPECT_THROW(triplet_satisfaction(h, raw, missing), DataError);
}

TEST(Head, SaveLoadRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "assaysel_head_test";
  std::filesystem::remove_all(dir);
  HeadTrainResult r{HeadParams::init(3, 4, 2, 11), {0.5, 0.25}};
  save_head(r, small_config(), dir / "head", "hash");
  const auto back = load_head(dir / "head");
  EXPECT_EQ(back.input_dim, 3u);
  EXPECT_EQ(back.output_dim, 2u);
  EXPECT_EQ(back.theta, r.head.theta);
  std::filesystem::remove_all(dir);
}

TEST(FinetuneConfig, Validates) {
  auto c = small_config();
  c.margin = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.beta1 = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}
