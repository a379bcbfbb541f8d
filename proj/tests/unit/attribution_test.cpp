#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>

#include "assaysel/attribution.hpp"
#include "assaysel/error.hpp"
#include "assaysel/rng.hpp"
#include "builders.hpp"
#include "oracles.hpp"

using namespace assaysel;
using testing_support::assay;
using testing_support::vec;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

TrakConfig quick_trak(std::uint64_t seed) {
  TrakConfig c;
  c.ensemble_size = 3;
  c.seed = seed;
  c.member.learning_rate = 0.1;
  c.member.epochs = 5;
  c.member.batch_size = 4;
  return c;
}

// Random measurements with both classes present.
AssayCollection random_collection(std::size_t n_assays, std::size_t per_assay, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<AssayRecord> assays;
  for (std::size_t a = 0; a < n_assays; ++a) {
    AssayRecord r;
    r.assay_id = "A" + std::to_string(a);
    r.target_id = "T1";
    r.description = "d" + std::to_string(a);
    for (std::size_t j = 0; j < per_assay; ++j) {
      const Vector x = vec({rng.normal(), rng.normal(), rng.normal()});
      const double ic50 = (x[0] + 0.3 * rng.normal() > 0) ^ (j % 5 == 0) ? 10.0 : 1e4;
      r.measurements.push_back(make_measurement(r.assay_id + "_m" + std::to_string(j), x, ic50));
    }
    assays.push_back(std::move(r));
  }
  return AssayCollection::create("T1", std::move(assays));
}

std::vector<std::string> ids_of(const AssayCollection& c) {
  std::vector<std::string> out;
  for (const auto& a : c.assays()) out.push_back(a.assay_id);
  return out;
}

TrakMatrix hand_matrix(std::vector<MeasurementKey> rows, std::vector<MeasurementKey> cols, Matrix s) {
  return TrakMatrix{std::move(rows), std::move(cols), std::move(s)};
}

}  // namespace

TEST(Projection, RegeneratesFromSeed) {
  const auto a = ProjectionSpec::gaussian(4, 9, 17);
  const auto b = ProjectionSpec::gaussian(4, 9, 17);
  EXPECT_EQ(a.matrix, b.matrix);
  EXPECT_NE(a.matrix, ProjectionSpec::gaussian(4, 9, 18).matrix);
  EXPECT_EQ(a.k(), 4u);
  EXPECT_EQ(a.input_dim(), 9u);
  EXPECT_TRUE(ProjectionSpec::identity(3).matrix.isIdentity());
  EXPECT_THROW(ProjectionSpec::gaussian(0, 3, 1), ConfigError);
  EXPECT_EQ(default_projection_dim(10), 10u);
  EXPECT_EQ(default_projection_dim(1000), 64u);
}

// E[(Pa).(Pb)] = a.b for entries ~ N(0, 1/k).
TEST(Projection, PreservesInnerProductsInExpectation) {
  const Vector a = vec({1.0, -2.0, 0.5, 3.0, 0.0, 1.0});
  const Vector b = vec({0.5, 1.0, -1.0, 2.0, 1.0, -0.5});
  constexpr int kDraws = 1000;
  double sum = 0, sq = 0;
  for (int s = 0; s < kDraws; ++s) {
    const auto p = ProjectionSpec::gaussian(4, 6, static_cast<std::uint64_t>(s));
    const double v = (p.matrix * a).dot(p.matrix * b);
    sum += v;
    sq += v * v;
  }
  const double mean = sum / kDraws;
  const double se = std::sqrt((sq / kDraws - mean * mean) / kDraws);
  EXPECT_NEAR(mean, a.dot(b), 3.0 * se);
}

TEST(GradFeature, IdentityProjectionIsRawGradient) {
  ModelParams p = init_params(Architecture::kLogistic, 2, 0, 0);
  p.theta = vec({0.2, -0.1, 0.05});
  const auto m = make_measurement("m", vec({1.0, 2.0}), 10.0);
  EXPECT_EQ(grad_feature(p, m, ProjectionSpec::identity(3)), loss_and_grad(p, m).grad);
  EXPECT_THROW(grad_feature(p, m, ProjectionSpec::identity(4)), DataError);
}

TEST(GradFeature, SaturatedCorrectPointHasZeroFeature) {
  ModelParams p = init_params(Architecture::kLogistic, 1, 0, 0);
  p.theta = vec({200.0, 0.0});
  const auto phi = grad_feature(p, vec({1.0}), 1.0, ProjectionSpec::gaussian(2, 2, 3));
  EXPECT_LT(phi.norm(), 1e-9);
}

// With a square (invertible) projection and a tiny ridge, the kernel-corrected
// score is g_i^T (G^T G)^-1 g_j whatever the projection is. Zero epochs on a
// logistic model leaves theta = 0, so g = (0.5 - y) [x, 1] in closed form.
TEST(Trak, KernelCorrectedMatchesClosedFormAtInitialization) {
  const auto c = random_collection(2, 6, 5);
  const auto ids = ids_of(c);
  const auto set = AttributionSet::from_assays(c, ids);
  TrakConfig cfg;
  cfg.ensemble_size = 2;
  cfg.ridge = 1e-10;
  cfg.member.epochs = 0;
  cfg.member.subsample_fraction = 1.0;
  cfg.seed = 8;
  const auto t = trak_scores(set, set, cfg);

  Matrix g(static_cast<Eigen::Index>(set.size()), 4);
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    g.row(i) << set.data.features.row(i), 1.0;
    g.row(i) *= 0.5 - set.data.labels[i];
  }
  const Matrix expected = g * (g.transpose() * g).inverse() * g.transpose();
  EXPECT_LT((t.scores - expected).norm() / expected.norm(), 1e-5);
}

TEST(Trak, SelfScoresNonNegativeUnderPlainDot) {
  const auto c = random_collection(3, 8, 6);
  const auto ids = ids_of(c);
  const auto set = AttributionSet::from_assays(c, ids);
  auto cfg = quick_trak(2);
  cfg.estimator = TrakEstimator::kPlainDot;
  const auto t = trak_scores(set, set, cfg);
  for (Eigen::Index i = 0; i < t.scores.rows(); ++i) EXPECT_GE(t.scores(i, i), 0.0);
}

TEST(Trak, PermutingInputsPermutesScores) {
  const auto c = random_collection(3, 6, 7);
  auto ids = ids_of(c);
  const auto set = AttributionSet::from_assays(c, ids);
  std::reverse(ids.begin(), ids.end());
  const auto flipped = AttributionSet::from_assays(c, ids);
  const auto cfg = quick_trak(3);
  const auto a = trak_scores(set, set, cfg);
  const auto b = trak_scores(flipped, set, cfg);
  for (std::size_t i = 0; i < a.train_ids.size(); ++i) {
    const auto j = static_cast<std::size_t>(
        std::find(b.train_ids.begin(), b.train_ids.end(), a.train_ids[i]) - b.train_ids.begin());
    ASSERT_LT(j, b.train_ids.size());
    EXPECT_TRUE(a.scores.row(static_cast<Eigen::Index>(i)) == b.scores.row(static_cast<Eigen::Index>(j)));
  }
}

TEST(Trak, DeterministicAndIndependentOfJobs) {
  const auto c = random_collection(4, 6, 8);
  const auto ids = ids_of(c);
  const auto set = AttributionSet::from_assays(c, ids);
  auto cfg = quick_trak(4);
  cfg.tile_size = 5;
  const auto a = trak_scores(set, set, cfg);
  cfg.jobs = 4;
  const auto b = trak_scores(set, set, cfg);
  EXPECT_EQ(a.scores, b.scores);
  cfg.seed = 5;
  EXPECT_NE(a.scores, trak_scores(set, set, cfg).scores);
}

TEST(Trak, SingleClassSubsamplesFailLoudly) {
  const auto c = AssayCollection::create("T1", {assay("A", 1)});
  const auto ids = ids_of(c);
  const auto set = AttributionSet::from_assays(c, ids);
  EXPECT_THROW(trak_scores(set, set, quick_trak(1)), ComputeError);
}

TEST(Trak, EstimatorNames) {
  EXPECT_EQ(parse_trak_estimator(to_string(TrakEstimator::kPlainDot)), TrakEstimator::kPlainDot);
  EXPECT_THROW(parse_trak_estimator("magic"), ConfigError);
  TrakConfig c;
  c.ridge = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(AssayTrak, MeansOverBlocks) {
  // Rows: A/m1, A/m2, B/m3; cols: C/m4, C/m5.
  Matrix s(3, 2);
  s << 1, 2, 3, 4, 10, 20;
  const auto t = hand_matrix({{"A", "m1"}, {"A", "m2"}, {"B", "m3"}}, {{"C", "m4"}, {"C", "m5"}}, s);
  const std::vector<std::string> train{"A", "B"};
  const auto v = assay_trak(t, train, "C");
  EXPECT_DOUBLE_EQ(v[0], 2.5);
  EXPECT_DOUBLE_EQ(v[1], 15.0);
  const auto m = assay_trak_matrix(t);
  EXPECT_DOUBLE_EQ(m.at("A", "C"), 2.5);
  EXPECT_THROW(m.at("C", "A"), DataError);
  EXPECT_THROW(assay_trak(t, train, "Z"), DataError);
}

TEST(AssayTrak, SingletonAndUniform) {
  Matrix s = Matrix::Constant(2, 3, 0.7);
  const auto t = hand_matrix({{"A", "x"}, {"A", "y"}}, {{"B", "p"}, {"B", "q"}, {"B", "r"}}, s);
  const std::vector<std::string> a{"A"};
  EXPECT_DOUBLE_EQ(assay_trak(t, a, "B")[0], 0.7);
  Matrix one(1, 1);
  one << -3.0;
  const auto u = hand_matrix({{"A", "x"}}, {{"B", "p"}}, one);
  EXPECT_DOUBLE_EQ(assay_trak(u, a, "B")[0], -3.0);
}

TEST(AssayTrak, SelfPairsExcluded) {
  Matrix s(2, 2);
  s << 100, 1, 3, 100;
  const auto t = hand_matrix({{"A", "m1"}, {"A", "m2"}}, {{"B", "m1"}, {"B", "m2"}}, s);
  const std::vector<std::string> a{"A"};
  EXPECT_DOUBLE_EQ(assay_trak(t, a, "B")[0], 2.0);
  EXPECT_DOUBLE_EQ(assay_trak(t, a, "B", false)[0], 51.0);
  Matrix only(1, 1);
  only << 5;
  const auto self = hand_matrix({{"A", "m1"}}, {{"A", "m1"}}, only);
  EXPECT_TRUE(std::isnan(assay_trak_matrix(self).at("A", "A")));
}

TEST(RankAssays, DescendingTiesByIdNanLast) {
  const std::vector<std::pair<std::string, double>> s{{"c", 1.0}, {"a", kNaN}, {"b", 1.0}, {"d", 2.0}};
  EXPECT_EQ(rank_assays_by_trak(s), (std::vector<std::string>{"d", "b", "c", "a"}));
  auto shuffled = s;
  std::reverse(shuffled.begin(), shuffled.end());
  EXPECT_EQ(rank_assays_by_trak(shuffled), rank_assays_by_trak(s));
}

TEST(AnchorRankings, SkipsAnchorItself) {
  AssayTrakMatrix m;
  m.train_assays = {"A", "B", "C"};
  m.eval_assays = {"A", "B", "C"};
  m.scores.resize(3, 3);
  m.scores << 9, 1, 5,  //
      2, 9, 6,          //
      3, 4, 9;
  const auto r = anchor_rankings(m);
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[0].first, "A");
  EXPECT_EQ(r[0].second, (std::vector<std::string>{"C", "B"}));
  EXPECT_EQ(r[1].second, (std::vector<std::string>{"C", "A"}));
  EXPECT_EQ(r[2].second, (std::vector<std::string>{"B", "A"}));
}

TEST(TrakMatrixFile, RoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "assaysel_trak_test";
  std::filesystem::remove_all(dir);
  Matrix s(2, 3);
  s << 1e-300, -0.0, 1.0 / 3.0, 4, 5, 6;
  const auto t = hand_matrix({{"A", "m,1"}, {"B", "m2"}}, {{"C", "x"}, {"C", "y"}, {"D", "z"}}, s);
  save_trak_matrix(t, dir / "split0.trakmat", TrakConfig{}, "h");
  const auto back = load_trak_matrix(dir / "split0.trakmat");
  EXPECT_EQ(back.train_ids, t.train_ids);
  EXPECT_EQ(back.eval_ids, t.eval_ids);
  EXPECT_EQ(back.scores, t.scores);
  std::filesystem::resize_file(dir / "split0.trakmat", 20);
  EXPECT_THROW(load_trak_matrix(dir / "split0.trakmat"), DataError);
  std::filesystem::remove_all(dir);
}

// Removing a helpful assay should hurt: per-assay scores correlate with a
// leave-one-assay-out retraining oracle on a small clean problem.
TEST(Trak, AgreesWithLeaveOneOutOnToyProblem) {
  const auto c = random_collection(8, 5, 21);
  const auto ids = ids_of(c);
  const auto train = AttributionSet::from_assays(c, ids);
  std::vector<Measurement> eval;
  Rng rng(99);
  for (int j = 0; j < 40; ++j) {
    const Vector x = vec({rng.normal(), rng.normal(), rng.normal()});
    eval.push_back(make_measurement("e" + std::to_string(j), x, x[0] > 0 ? 10.0 : 1e4));
  }
  AttributionSet eval_set;
  for (const auto& m : eval) eval_set.keys.push_back({"EVAL", m.molecule_id});
  eval_set.data = Dataset::from(eval);

  TrakConfig cfg;
  cfg.ensemble_size = 10;
  cfg.seed = 3;
  cfg.member.learning_rate = 0.1;
  cfg.member.epochs = 50;
  cfg.member.batch_size = 8;
  const auto t = trak_scores(train, eval_set, cfg);
  const auto trak = assay_trak(t, ids, "EVAL");

  TrainConfig full = cfg.member;
  full.subsample_fraction = 1.0;
  const Dataset eval_data = Dataset::from(eval);
  std::vector<double> delta;
  for (const auto& removed : ids) {
    double d = 0.0;
    for (std::uint64_t s = 0; s < 20; ++s) {
      full.seed = s;
      std::vector<Measurement> kept, all;
      for (const auto& a : c.assays()) {
        for (const auto& m : a.measurements) {
          all.push_back(m);
          if (a.assay_id != removed) kept.push_back(m);
        }
      }
      d += mean_loss(assaysel::train(kept, full).params, eval_data) -
           mean_loss(assaysel::train(all, full).params, eval_data);
    }
    delta.push_back(d / 20.0);
  }
  EXPECT_GE(oracle::spearman(trak, delta), 0.4);
}
