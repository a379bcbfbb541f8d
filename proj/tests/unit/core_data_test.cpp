#include <gtest/gtest.h>

#include <filesystem>
#include <functional>

#include "assaysel/core_data.hpp"
#include "assaysel/embedding_provider.hpp"
#include "assaysel/error.hpp"
#include "assaysel/io.hpp"
#include "builders.hpp"

using namespace assaysel;
using testing_support::assay;
using testing_support::embeddings;
using testing_support::vec;

namespace {

DataErrc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const DataError& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected a DataError";
  return DataErrc::kIo;
}

const char* kAssays =
    "assay_id,target_id,description,bao_label\n"
    "A1,T1,\"Inhibition, 10 min\",BAO_1\n"
    "A2,T1,plain,\n"
    "B1,T2,other,BAO_2\n";

const char* kMeasurements =
    "assay_id,molecule_id,ic50_nM,f0,f1\n"
    "A1,M1,5,0.5,1\n"
    "A1,M2,2000,1.5,-1\n"
    "A2,M1,999.99,0,0\n"
    "B1,M3,1000,1,1\n";

}  // namespace

TEST(ActivityLabel, StrictThresholdAtOneMicromolar) {
  EXPECT_EQ(activity_label(999.999), 1);
  EXPECT_EQ(activity_label(1000.0), 0);
  EXPECT_EQ(activity_label(1e6), 0);
  EXPECT_EQ(make_measurement("m", vec({1}), 10.0).label, 1);
}

TEST(ActivityLabel, NonPositiveIc50Rejected) {
  EXPECT_EQ(code_of([] { make_measurement("m", vec({1}), 0.0); }), DataErrc::kNonPositiveIc50);
  EXPECT_EQ(code_of([] { make_measurement("m", vec({1}), -3.0); }), DataErrc::kNonPositiveIc50);
}

TEST(DescriptionKey, NfcAndTrim) {
  EXPECT_EQ(description_key("  café assay \n"), "café assay");
  EXPECT_EQ(description_key("café assay"), description_key("café assay"));
  EXPECT_NE(description_key("Assay"), description_key("assay"));
}

TEST(AssayCollection, Validates) {
  EXPECT_EQ(code_of([] { AssayCollection::create("T1", {}); }), DataErrc::kEmptyCollection);
  EXPECT_EQ(code_of([] { AssayCollection::create("T1", {assay("A", 2), assay("A", 3)}); }),
            DataErrc::kDuplicateAssay);
  EXPECT_EQ(code_of([] { AssayCollection::create("T1", {assay("A", 0)}); }), DataErrc::kEmptyAssay);
  EXPECT_EQ(code_of([] { AssayCollection::create("T1", {assay("A", 2, "", {}, "T2")}); }),
            DataErrc::kMixedTargets);
  auto dup = assay("A", 2);
  dup.measurements[1].molecule_id = dup.measurements[0].molecule_id;
  EXPECT_EQ(code_of([&] { AssayCollection::create("T1", {dup}); }), DataErrc::kDuplicateRow);
  auto wide = assay("B", 1);
  wide.measurements[0].features = vec({1, 2, 3});
  EXPECT_EQ(code_of([&] { AssayCollection::create("T1", {assay("A", 2), wide}); }),
            DataErrc::kDimensionMismatch);
}

TEST(AssayCollection, EmbeddingsMustCoverExactly) {
  const auto c = AssayCollection::create("T1", {assay("A", 2), assay("B", 2)});
  EXPECT_FALSE(c.has_embeddings());
  EXPECT_EQ(code_of([&] { (void)c.with_embeddings(embeddings({{"A", vec({1, 0})}})); }),
            DataErrc::kMissingEmbedding);
  EXPECT_EQ(code_of([&] {
              (void)c.with_embeddings(embeddings({{"A", vec({1, 0})}, {"B", vec({1})}}));
            }),
            DataErrc::kDimensionMismatch);
  EXPECT_EQ(code_of([&] {
              (void)c.with_embeddings(
                  embeddings({{"A", vec({1, 0})}, {"B", vec({0, 1})}, {"C", vec({1, 1})}}));
            }),
            DataErrc::kUnknownAssay);
  const auto e = c.with_embeddings(embeddings({{"A", vec({1, 0})}, {"B", vec({0, 1})}}));
  EXPECT_EQ(e.embedding_dim(), 2u);
  EXPECT_FALSE(c.has_embeddings());  // the original is untouched
}

TEST(AssayCollection, Lookup) {
  const auto c = AssayCollection::create("T1", {assay("A", 2), assay("B", 3)});
  EXPECT_EQ(c.assay("B").measurements.size(), 3u);
  EXPECT_EQ(c.index_of("B"), 1u);
  EXPECT_FALSE(c.index_of("Z"));
  EXPECT_EQ(code_of([&] { c.assay("Z"); }), DataErrc::kUnknownAssay);
  EXPECT_EQ(c.measurement_count(), 5u);
  EXPECT_EQ(c.feature_dim(), 2u);
}

TEST(AssayTables, ParsesPerTarget) {
  const auto cs = parse_assay_tables_text(kAssays, kMeasurements);
  ASSERT_EQ(cs.size(), 2u);
  EXPECT_EQ(cs[0].target_id(), "T1");
  EXPECT_EQ(cs[0].size(), 2u);
  EXPECT_EQ(cs[0].assay("A1").description, "Inhibition, 10 min");
  EXPECT_EQ(cs[0].assay("A1").bao_label, "BAO_1");
  EXPECT_FALSE(cs[0].assay("A2").bao_label);
  EXPECT_EQ(cs[0].assay("A2").measurements[0].label, 1);
  EXPECT_EQ(cs[1].assay("B1").measurements[0].label, 0);
  EXPECT_DOUBLE_EQ(cs[0].assay("A1").measurements[1].features[0], 1.5);
}

TEST(AssayTables, RoundTripIsBitStable) {
  const auto cs = parse_assay_tables_text(kAssays, kMeasurements);
  const auto [a, m] = format_assay_tables(cs);
  const auto again = parse_assay_tables_text(a, m);
  EXPECT_EQ(format_assay_tables(again), std::make_pair(a, m));
  ASSERT_EQ(again.size(), cs.size());
  for (std::size_t t = 0; t < cs.size(); ++t) {
    for (std::size_t i = 0; i < cs[t].size(); ++i) {
      const auto& x = cs[t].assays()[i];
      const auto& y = again[t].assays()[i];
      EXPECT_EQ(x.description, y.description);
      for (std::size_t j = 0; j < x.measurements.size(); ++j) {
        EXPECT_EQ(x.measurements[j].ic50_nm, y.measurements[j].ic50_nm);
        EXPECT_EQ(x.measurements[j].features, y.measurements[j].features);
      }
    }
  }
}

TEST(AssayTables, SchemaErrors) {
  EXPECT_EQ(code_of([] { parse_assay_tables_text("assay_id,target_id,description\nA,T,d\n", kMeasurements); }),
            DataErrc::kMissingColumn);
  EXPECT_EQ(code_of([] {
              parse_assay_tables_text(kAssays, "assay_id,molecule_id,ic50_nM,f0,f1\nZZ,M1,5,0,0\n");
            }),
            DataErrc::kDanglingAssay);
  EXPECT_EQ(code_of([] {
              parse_assay_tables_text(kAssays, "assay_id,molecule_id,ic50_nM,f0,f1\nA1,M1,-5,0,0\n");
            }),
            DataErrc::kNonPositiveIc50);
  EXPECT_EQ(code_of([] {
              parse_assay_tables_text(kAssays, "assay_id,molecule_id,ic50_nM,f0,f1\nA1,M1,abc,0,0\n");
            }),
            DataErrc::kMalformedRow);
  EXPECT_EQ(code_of([] {
              parse_assay_tables_text(kAssays, "assay_id,molecule_id,ic50_nM,f0,f1\nA1,M1,5,0\n");
            }),
            DataErrc::kDimensionMismatch);
  EXPECT_EQ(code_of([] {
              parse_assay_tables_text(kAssays,
                                      "assay_id,molecule_id,ic50_nM,f0,f1\nA1,M1,5,0,0\nA1,M1,6,0,0\n");
            }),
            DataErrc::kDuplicateRow);
  EXPECT_EQ(code_of([] { parse_assay_tables_text(kAssays, "assay_id,molecule_id,ic50_nM,f0,f2\n"); }),
            DataErrc::kMissingColumn);
  // An assay row without measurements is an empty assay.
  EXPECT_EQ(code_of([] {
              parse_assay_tables_text(kAssays, "assay_id,molecule_id,ic50_nM,f0,f1\nA1,M1,5,0,0\n");
            }),
            DataErrc::kEmptyAssay);
}

TEST(Embeddings, ParseAndComplete) {
  const std::string text = "assay_id,e0,e1,e2\nA,1,2,3\nB,4,5,6\nC,7,8,9\n";
  const auto m = parse_embeddings_csv(text, "embeddings.csv");
  ASSERT_EQ(m.size(), 3u);
  EXPECT_EQ(m.at("B").raw, vec({4, 5, 6}));
  EXPECT_EQ(code_of([] { parse_embeddings_csv("assay_id,e0,e1\nA,1\n", "x"); }), DataErrc::kDimensionMismatch);
  EXPECT_EQ(code_of([] { parse_embeddings_csv("assay_id,x\nA,1\n", "x"); }), DataErrc::kMissingColumn);
  EXPECT_EQ(code_of([] { parse_embeddings_csv("assay_id,e0\nA,1\nA,2\n", "x"); }), DataErrc::kDuplicateRow);
}

TEST(Embeddings, FileSourceSubsetsAndRequiresCoverage) {
  const auto dir = std::filesystem::temp_directory_path() / "assaysel_core_data_test";
  std::filesystem::create_directories(dir);
  io::write_file(dir / "e.csv", "assay_id,e0,e1\nA,1,0\nB,0,1\nX,1,1\n");
  const auto c = AssayCollection::create("T1", {assay("A", 2), assay("B", 2)});
  const auto m = load_embeddings(EmbeddingFileSource{dir / "e.csv"}, c);
  EXPECT_EQ(m.size(), 2u);
  EXPECT_FALSE(m.contains("X"));
  const auto c3 = AssayCollection::create("T1", {assay("A", 2), assay("B", 2), assay("C", 1)});
  EXPECT_EQ(code_of([&] { load_embeddings(EmbeddingFileSource{dir / "e.csv"}, c3); }),
            DataErrc::kMissingEmbedding);
  std::filesystem::remove_all(dir);
}

TEST(Embeddings, FormatRoundTrip) {
  auto m = embeddings({{"A", vec({0.1, 1.0 / 3.0})}, {"B", vec({-2, 1e-300})}});
  const auto back = parse_embeddings_csv(format_embeddings_csv(m, false), "x");
  EXPECT_EQ(back.at("A").raw, m.at("A").raw);
  EXPECT_EQ(back.at("B").raw, m.at("B").raw);
  EXPECT_THROW(format_embeddings_csv(m, true), DataError);
}

TEST(CollectionStats, Sums) {
  const auto c = AssayCollection::create("T1", {assay("A", 3), assay("B", 7)});
  const auto s = collection_stats(c);
  EXPECT_EQ(s.assay_count, 2u);
  EXPECT_EQ(s.measurement_count, 10u);
  EXPECT_DOUBLE_EQ(s.active_fraction, 6.0 / 10.0);
  ASSERT_EQ(s.assay_sizes.size(), 2u);
  EXPECT_EQ(s.assay_sizes[1], std::make_pair(std::string("B"), std::size_t{7}));

  AssayRecord all_active = assay("C", 2);
  all_active.measurements[1] = make_measurement("C_x", vec({0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(collection_stats(AssayCollection::create("T1", {all_active})).active_fraction, 1.0);
}
