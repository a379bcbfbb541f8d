#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "assaysel/error.hpp"
#include "assaysel/report.hpp"

using namespace assaysel;

namespace {

LearningCurve sample_curve() {
  LearningCurve c;
  c.meta = {"T,1", "assaymatch", 2, 1, "logistic", 11, 22};
  c.points = {{0.1, 71.25, 12.5}, {0.5, std::nullopt, 40.0}, {1.0, 1.0 / 3.0, 80.0}};
  return c;
}

Summary sample_summary() {
  std::vector<LearningCurve> cs;
  for (std::size_t split = 0; split < 3; ++split) {
    for (const char* s : {"assaymatch", "random"}) {
      LearningCurve c;
      c.meta = {"T1", s, split, 0, "logistic", 1, 2};
      const double base = std::string(s) == "random" ? 60.0 : 70.0;
      c.points = {{0.5, base + static_cast<double>(split), 10}, {1.0, 80.0 + static_cast<double>(split * split), 20}};
      cs.push_back(c);
    }
  }
  const std::vector<double> f{0.5, 1.0};
  return summarize(cs, f, "random");
}

}  // namespace

TEST(Stamp, CheckedAgainstManifest) {
  const auto s = artifact_stamp("abc");
  EXPECT_EQ(s, "# manifest_hash=abc\n");
  EXPECT_NO_THROW(check_artifact_stamp(s + "x", "abc", "f"));
  try {
    check_artifact_stamp(s, "abd", "f");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.code(), DataErrc::kManifestMismatch);
  }
}

TEST(CurveCsv, RoundTrip) {
  const auto c = sample_curve();
  const auto text = format_curve_csv(c, "h1");
  const auto back = parse_curve_csv(text, "h1", "curve.csv");
  EXPECT_EQ(back.meta.target_id, "T,1");
  EXPECT_EQ(back.meta.run_seed, 22u);
  ASSERT_EQ(back.points.size(), 3u);
  EXPECT_EQ(back.points[0].auroc, 71.25);
  EXPECT_FALSE(back.points[1].auroc);
  EXPECT_EQ(back.points[2].auroc, 1.0 / 3.0);
  EXPECT_EQ(format_curve_csv(back, "h1"), text);
  EXPECT_THROW(parse_curve_csv(text, "h2", "curve.csv"), DataError);
}

TEST(SummaryJson, Schema) {
  ReportMetadata meta;
  meta.manifest_hash = "hh";
  meta.architecture = "logistic";
  meta.targets = {{"T1", CollectionStats{5, 50, 0.4, {}}}};
  const auto j = nlohmann::json::parse(format_summary_json(sample_summary(), meta));
  EXPECT_EQ(j["manifest_hash"], "hh");
  EXPECT_EQ(j["metadata"]["reference_strategy"], "random");
  EXPECT_EQ(j["metadata"]["fractions"].size(), 2u);
  EXPECT_EQ(j["targets"][0]["assays"], 5);
  bool saw_overall = false;
  for (const auto& row : j["aulc"]) {
    EXPECT_TRUE(row.contains("aulc"));
    EXPECT_TRUE(row.contains("p"));
    EXPECT_EQ(row["mean_auroc"].size(), 2u);
    if (row["strategy"] == "assaymatch" && row["scope"] == "overall") {
      saw_overall = true;
      EXPECT_GT(row["t"].get<double>(), 0.0);
      EXPECT_EQ(row["pairs"], 6);
    }
  }
  EXPECT_TRUE(saw_overall);
  EXPECT_EQ(format_summary_json(sample_summary(), meta), format_summary_json(sample_summary(), meta));
}

TEST(LearningCurveSvg, TicksAndDeterminism) {
  const auto s = sample_summary();
  const auto svg = render_learning_curve_svg("T1", s, "hh");
  EXPECT_EQ(svg.rfind("<svg", 0) == 0 || svg.find("<svg") != std::string::npos, true);
  for (int p = 10; p <= 100; p += 10) {
    EXPECT_NE(svg.find(">" + std::to_string(p) + "%</text>"), std::string::npos) << p;
  }
  EXPECT_NE(svg.find("assaymatch"), std::string::npos);
  EXPECT_EQ(svg, render_learning_curve_svg("T1", s, "hh"));
}
