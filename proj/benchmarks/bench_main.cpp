#include <benchmark/benchmark.h>

#include <vector>

#include "assaysel/attribution.hpp"
#include "assaysel/evaluation.hpp"
#include "assaysel/finetune.hpp"
#include "assaysel/predictor.hpp"
#include "assaysel/rng.hpp"
#include "assaysel/synthdata.hpp"

namespace {

using namespace assaysel;

World bench_world(std::size_t n_assays) {
  WorldConfig w;
  w.n_assays = n_assays;
  w.seed = 11;
  return generate_world(w);
}

void BM_PredictorTrain(benchmark::State& state) {
  const auto world = bench_world(static_cast<std::size_t>(state.range(0)));
  std::vector<const Measurement*> rows;
  for (const auto& a : world.collection.assays()) {
    for (const auto& m : a.measurements) rows.push_back(&m);
  }
  const auto data = Dataset::from(std::span<const Measurement* const>(rows));
  TrainConfig cfg;
  cfg.seed = 3;
  for (auto _ : state) benchmark::DoNotOptimize(train(data, cfg));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * data.size() * cfg.epochs));
}
BENCHMARK(BM_PredictorTrain)->Arg(20)->Arg(60)->Unit(benchmark::kMillisecond);

void BM_TrakScores(benchmark::State& state) {
  const auto world = bench_world(static_cast<std::size_t>(state.range(0)));
  std::vector<std::string> ids;
  for (const auto& a : world.collection.assays()) ids.push_back(a.assay_id);
  const auto set = AttributionSet::from_assays(world.collection, ids);
  TrakConfig cfg;
  cfg.seed = 5;
  for (auto _ : state) benchmark::DoNotOptimize(trak_scores(set, set, cfg));
}
BENCHMARK(BM_TrakScores)->Arg(20)->Arg(60)->Unit(benchmark::kMillisecond);

void BM_TripletLossGrad(benchmark::State& state) {
  const auto dim = static_cast<std::size_t>(state.range(0));
  Rng rng(9);
  RawEmbeddings raw;
  for (int i = 0; i < 64; ++i) {
    Vector v(static_cast<Eigen::Index>(dim));
    for (Eigen::Index j = 0; j < v.size(); ++j) v[j] = rng.normal();
    raw.emplace("A" + std::to_string(i), v);
  }
  std::vector<Triplet> triplets;
  for (int i = 0; i < 512; ++i) {
    triplets.push_back({"A" + std::to_string(rng.index(64)), "A" + std::to_string(rng.index(64)),
                        "A" + std::to_string(rng.index(64))});
  }
  const auto head = HeadParams::init(dim, dim, dim, 1);
  for (auto _ : state) benchmark::DoNotOptimize(triplet_loss_grad(head, raw, triplets, 0.1));
}
BENCHMARK(BM_TripletLossGrad)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_Auroc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(13);
  std::vector<int> labels(n);
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = rng.bernoulli(0.3) ? 1 : 0;
    scores[i] = rng.uniform() + 0.3 * labels[i];
  }
  for (auto _ : state) benchmark::DoNotOptimize(auroc(labels, scores));
}
BENCHMARK(BM_Auroc)->Arg(1000)->Arg(100000);

}  // namespace
BENCHMARK_MAIN();
