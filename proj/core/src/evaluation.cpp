#include "assaysel/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include <boost/math/distributions/students_t.hpp>

#include "assaysel/error.hpp"
#include "assaysel/parallel.hpp"
#include "assaysel/rng.hpp"

namespace assaysel {

namespace {

struct Group {
  std::string key;
  std::vector<std::string> assay_ids;
  std::size_t measurements = 0;
};

std::vector<Group> description_groups(const AssayCollection& collection) {
  std::map<std::string, Group> by_key;
  for (const auto& a : collection.assays()) {
    auto& g = by_key[description_key(a.description)];
    g.assay_ids.push_back(a.assay_id);
    g.measurements += a.measurements.size();
  }
  std::vector<Group> out;
  for (auto& [key, g] : by_key) {
    g.key = key;
    std::sort(g.assay_ids.begin(), g.assay_ids.end());
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace

std::vector<SplitSpec> make_splits(const AssayCollection& collection, std::size_t n_splits,
                                   std::uint64_t seed, const SplitConfig& config) {
  if (!(config.test_fraction > 0.0 && config.test_fraction < 1.0)) {
    throw ConfigError("test_fraction must lie in (0, 1)");
  }
  if (config.n_test_assays == 0) throw ConfigError("n_test_assays must be positive");
  const auto groups = description_groups(collection);
  if (groups.size() < 2) {
    throw ComputeError("target " + collection.target_id() +
                       " has fewer than two description groups; cannot split");
  }
  const auto total = static_cast<double>(collection.measurement_count());

  std::vector<SplitSpec> splits;
  for (std::size_t i = 0; i < n_splits; ++i) {
    SplitSpec s;
    s.index = i;
    s.seed = derive_seed(seed, {i, 0x5b117});
    Rng rng(s.seed);
    std::vector<std::size_t> order(groups.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));

    std::vector<bool> in_test(groups.size(), false);
    std::size_t test_size = 0;
    std::size_t test_groups = 0;
    for (auto g : order) {
      if (test_groups + 1 == groups.size()) break;
      const double now = std::abs(static_cast<double>(test_size) / total - config.test_fraction);
      const double with = std::abs(static_cast<double>(test_size + groups[g].measurements) / total -
                                   config.test_fraction);
      if (test_groups == 0 || with < now) {
        in_test[g] = true;
        test_size += groups[g].measurements;
        ++test_groups;
      }
    }
    for (std::size_t g = 0; g < groups.size(); ++g) {
      auto& side = in_test[g] ? s.test_ids : s.train_ids;
      side.insert(side.end(), groups[g].assay_ids.begin(), groups[g].assay_ids.end());
    }
    std::sort(s.train_ids.begin(), s.train_ids.end());
    std::sort(s.test_ids.begin(), s.test_ids.end());
    s.test_share = static_cast<double>(test_size) / total;

    s.sampled_test = s.test_ids;
    if (s.sampled_test.size() > config.n_test_assays) {
      rng.shuffle(std::span<std::string>(s.sampled_test));
      s.sampled_test.resize(config.n_test_assays);
      std::sort(s.sampled_test.begin(), s.sampled_test.end());
    }
    splits.push_back(std::move(s));
  }
  return splits;
}

void check_split(const AssayCollection& collection, const SplitSpec& split) {
  std::set<std::string, std::less<>> train_keys;
  for (const auto& id : split.train_ids) train_keys.insert(description_key(collection.assay(id).description));
  for (const auto& id : split.test_ids) {
    if (train_keys.contains(description_key(collection.assay(id).description))) {
      throw DataError(DataErrc::kSplitLeak, "split " + std::to_string(split.index) + ": test assay " + id +
                                                " shares its description with a training assay");
    }
  }
}

std::optional<double> auroc(std::span<const int> labels, std::span<const double> scores) {
  if (labels.size() != scores.size()) {
    throw ComputeError("auroc: labels and scores differ in length");
  }
  const std::size_t n = labels.size();
  std::size_t n_pos = 0;
  for (int y : labels) n_pos += y == 1 ? 1 : 0;
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  // Sum of positive midranks; every term is a multiple of 1/2, so this is exact.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t r = i; r < j; ++r) {
      if (labels[order[r]] == 1) rank_sum += midrank;
    }
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  const double u = rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

namespace {

AssayDescriptor descriptor_of(const AssayCollection& collection, const AssayRecord& a) {
  AssayDescriptor d{a.assay_id, a.description, a.bao_label, Vector()};
  if (collection.has_embeddings()) d.raw_embedding = collection.embedding(a.assay_id).raw;
  return d;
}

}  // namespace

std::vector<CandidateAssay> split_candidates(const AssayCollection& collection, const SplitSpec& split) {
  std::vector<CandidateAssay> out;
  for (const auto& id : split.train_ids) {
    const auto& a = collection.assay(id);
    out.push_back({descriptor_of(collection, a), a.measurements.size()});
  }
  return out;
}

RankedSelection rank_for_test(const AssayCollection& collection, std::span<const CandidateAssay> candidates,
                              const SplitSpec& split, std::size_t test_index, StrategyKind strategy,
                              const HeadParams* head, bool normalize_raw, std::uint64_t run_seed) {
  const auto& test = collection.assay(split.sampled_test.at(test_index));
  SelectionStrategy s{strategy, std::nullopt, normalize_raw};
  if (strategy == StrategyKind::kRandom) s.seed = derive_seed(run_seed, {test_index, 0x4a4d});
  return rank_training_assays(s, descriptor_of(collection, test), candidates, head);
}

LearningCurve run_learning_curve(const AssayCollection& collection, const SplitSpec& split,
                                 StrategyKind strategy, const HeadParams* head,
                                 const CurveConfig& config, std::size_t run_index,
                                 std::uint64_t run_seed) {
  if (config.fractions.empty()) throw ConfigError("learning curve needs at least one fraction");
  for (std::size_t i = 0; i < config.fractions.size(); ++i) {
    const double f = config.fractions[i];
    if (!(f > 0.0 && f <= 1.0) || (i > 0 && f <= config.fractions[i - 1])) {
      throw ConfigError("fractions must be strictly increasing within (0, 1]");
    }
  }
  if (split.sampled_test.empty()) throw ComputeError("split has no test assays");
  check_split(collection, split);

  LearningCurve curve;
  curve.meta = {collection.target_id(), std::string(to_string(strategy)), split.index, run_index,
                std::string(to_string(config.predictor.arch)), split.seed, run_seed};

  const auto candidates = split_candidates(collection, split);

  const bool fixed = strategy == StrategyKind::kBaoExact;
  const std::vector<double> grid = fixed ? std::vector<double>{1.0} : config.fractions;
  const std::size_t n_test = split.sampled_test.size();

  // Cell (t, f) -> index into the list of distinct training subsets, or none.
  std::vector<std::vector<std::optional<std::size_t>>> cell_subset(n_test);
  std::vector<std::vector<double>> cell_size(n_test);
  std::map<std::vector<std::string>, std::size_t> subset_index;
  std::vector<std::vector<std::string>> subsets;
  for (std::size_t t = 0; t < n_test; ++t) {
    RankedSelection ranking;
    try {
      ranking = rank_for_test(collection, candidates, split, t, strategy, head, config.normalize_raw, run_seed);
    } catch (const DataError& e) {
      // A test assay without a BAO label leaves its bao-exact cells undefined.
      if (!fixed || e.code() != DataErrc::kMalformedRow) throw;
      curve.warnings.push_back(e.what());
      for (std::size_t f = 0; f < grid.size(); ++f) {
        cell_subset[t].push_back(std::nullopt);
        cell_size[t].push_back(0.0);
      }
      continue;
    }
    for (const auto& w : ranking.warnings) curve.warnings.push_back(w);
    for (double f : grid) {
      auto chosen = select_subset(ranking, f, config.unit);
      std::size_t size = 0;
      for (const auto& id : chosen) size += collection.assay(id).measurements.size();
      cell_size[t].push_back(static_cast<double>(size) / static_cast<double>(ranking.total_measurements));
      if (chosen.empty()) {
        cell_subset[t].push_back(std::nullopt);
        continue;
      }
      std::sort(chosen.begin(), chosen.end());
      auto [it, inserted] = subset_index.try_emplace(chosen, subsets.size());
      if (inserted) subsets.push_back(std::move(chosen));
      cell_subset[t].push_back(it->second);
    }
  }

  // Training data follows collection order whatever the selection order was.
  TrainConfig model_cfg = config.predictor;
  model_cfg.seed = derive_seed(run_seed, {0x30de1});
  std::vector<ModelParams> models(subsets.size());
  parallel_for(subsets.size(), config.jobs, [&](std::size_t i) {
    const std::set<std::string, std::less<>> keep(subsets[i].begin(), subsets[i].end());
    std::vector<const Measurement*> rows;
    for (const auto& a : collection.assays()) {
      if (!keep.contains(a.assay_id)) continue;
      for (const auto& m : a.measurements) rows.push_back(&m);
    }
    models[i] = train(Dataset::from(std::span<const Measurement* const>(rows)), model_cfg).params;
  });

  std::vector<Dataset> test_data;
  std::vector<std::vector<int>> test_labels;
  for (const auto& id : split.sampled_test) {
    const auto& a = collection.assay(id);
    test_data.push_back(Dataset::from(std::span<const Measurement>(a.measurements)));
    std::vector<int> labels;
    for (const auto& m : a.measurements) labels.push_back(m.label);
    test_labels.push_back(std::move(labels));
  }

  for (std::size_t fi = 0; fi < grid.size(); ++fi) {
    CurvePoint p;
    std::vector<int> pooled_labels;
    std::vector<double> pooled_scores;
    double macro_sum = 0.0;
    std::size_t macro_n = 0;
    double size_sum = 0.0;
    for (std::size_t t = 0; t < n_test; ++t) {
      size_sum += cell_size[t][fi];
      if (!cell_subset[t][fi]) continue;
      const Vector proba = predict_proba_rows(models[*cell_subset[t][fi]], test_data[t].features);
      if (config.macro) {
        if (auto a = auroc(test_labels[t], std::span<const double>(proba.data(), proba.size()))) {
          macro_sum += *a;
          ++macro_n;
        }
      } else {
        pooled_labels.insert(pooled_labels.end(), test_labels[t].begin(), test_labels[t].end());
        pooled_scores.insert(pooled_scores.end(), proba.data(), proba.data() + proba.size());
      }
    }
    p.train_measurements = size_sum / static_cast<double>(n_test);
    p.fraction = fixed ? p.train_measurements : grid[fi];
    if (config.macro) {
      if (macro_n > 0) p.auroc = 100.0 * macro_sum / static_cast<double>(macro_n);
    } else if (auto a = auroc(pooled_labels, pooled_scores)) {
      p.auroc = 100.0 * *a;
    }
    if (fixed) {
      // Report the training-set share as a fraction, the measurement count
      // is not meaningful across test assays of different splits.
      double count = 0.0;
      for (std::size_t t = 0; t < n_test; ++t) {
        if (cell_subset[t][fi]) {
          for (const auto& id : subsets[*cell_subset[t][fi]]) {
            count += static_cast<double>(collection.assay(id).measurements.size());
          }
        }
      }
      p.train_measurements = count / static_cast<double>(n_test);
    }
    curve.points.push_back(p);
  }
  return curve;
}

double aulc(std::span<const CurvePoint> points) {
  std::vector<std::pair<double, double>> defined;
  for (const auto& p : points) {
    if (p.auroc) defined.emplace_back(p.fraction, *p.auroc);
  }
  if (defined.size() < 2) throw ComputeError("AULC needs at least two defined curve points");
  std::sort(defined.begin(), defined.end());
  double area = 0.0;
  for (std::size_t i = 1; i < defined.size(); ++i) {
    area += 0.5 * (defined[i].second + defined[i - 1].second) * (defined[i].first - defined[i - 1].first);
  }
  const double span = defined.back().first - defined.front().first;
  if (!(span > 0.0)) throw ComputeError("AULC points share a single fraction");
  return area / span;
}

TTest paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ComputeError("paired t-test: samples differ in length");
  const std::size_t n = a.size();
  if (n < 2) throw ComputeError("paired t-test needs at least two pairs");
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double x : d) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (std::all_of(d.begin(), d.end(), [](double x) { return x == 0.0; })) return {0.0, 1.0, n};
  if (sd == 0.0) throw ComputeError("paired t-test: differences are constant and nonzero");
  const double t = mean / (sd / std::sqrt(static_cast<double>(n)));
  const boost::math::students_t dist(static_cast<double>(n - 1));
  const double p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  return {t, std::min(p, 1.0), n};
}

namespace {

std::optional<std::size_t> grid_index(std::span<const double> grid, double f) {
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (std::abs(grid[i] - f) < 1e-9) return i;
  }
  return std::nullopt;
}

int strategy_order(const std::string& name) {
  try {
    return static_cast<int>(parse_strategy(name));
  } catch (const ConfigError&) {
    return 1000;
  }
}

struct CellKey {
  std::string target;
  std::size_t split;
  std::size_t fraction;
  auto operator<=>(const CellKey&) const = default;
};

// (target, split, fraction) -> mean AUROC over runs for one strategy.
std::map<CellKey, double> paired_cells(std::span<const LearningCurve* const> curves,
                                       std::span<const double> grid) {
  std::map<CellKey, std::pair<double, std::size_t>> acc;
  for (const auto* c : curves) {
    for (const auto& p : c->points) {
      const auto fi = grid_index(grid, p.fraction);
      if (!fi || !p.auroc) continue;
      auto& slot = acc[{c->meta.target_id, c->meta.split, *fi}];
      slot.first += *p.auroc;
      ++slot.second;
    }
  }
  std::map<CellKey, double> out;
  for (const auto& [k, v] : acc) out[k] = v.first / static_cast<double>(v.second);
  return out;
}

AulcResult aggregate(const std::string& strategy, const std::string& target,
                     std::span<const LearningCurve* const> curves, std::span<const double> grid) {
  AulcResult r;
  r.strategy = strategy;
  r.target_id = target;
  std::vector<double> sums(grid.size(), 0.0);
  std::vector<std::size_t> counts(grid.size(), 0);
  double aulc_sum = 0.0;
  for (const auto* c : curves) {
    for (const auto& p : c->points) {
      if (!p.auroc) {
        ++r.undefined_cells;
        continue;
      }
      if (auto fi = grid_index(grid, p.fraction)) {
        sums[*fi] += *p.auroc;
        ++counts[*fi];
      }
    }
    std::size_t defined = 0;
    for (const auto& p : c->points) defined += p.auroc ? 1 : 0;
    if (defined >= 2) {
      aulc_sum += aulc(c->points);
      ++r.curves;
    }
  }
  r.aulc = r.curves > 0 ? aulc_sum / static_cast<double>(r.curves) : std::nan("");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    r.mean_auroc.push_back(counts[i] > 0 ? std::optional(sums[i] / static_cast<double>(counts[i]))
                                         : std::nullopt);
  }
  return r;
}

std::optional<TTest> compare(std::span<const LearningCurve* const> a, std::span<const LearningCurve* const> b,
                             std::span<const double> grid) {
  const auto ca = paired_cells(a, grid);
  const auto cb = paired_cells(b, grid);
  std::vector<double> xa;
  std::vector<double> xb;
  for (const auto& [k, v] : ca) {
    if (auto it = cb.find(k); it != cb.end()) {
      xa.push_back(v);
      xb.push_back(it->second);
    }
  }
  if (xa.size() < 2) return std::nullopt;
  try {
    return paired_t_test(xa, xb);
  } catch (const ComputeError&) {
    return std::nullopt;
  }
}

}  // namespace

Summary summarize(std::span<const LearningCurve> curves, std::span<const double> fractions,
                  std::string_view reference_strategy) {
  Summary s;
  s.fractions.assign(fractions.begin(), fractions.end());
  s.reference_strategy = std::string(reference_strategy);

  std::map<std::string, std::vector<const LearningCurve*>> by_strategy;
  std::set<std::string> targets;
  const std::string bao(to_string(StrategyKind::kBaoExact));
  std::map<std::string, std::vector<const LearningCurve*>> bao_by_target;
  for (const auto& c : curves) {
    if (c.meta.strategy == bao) {
      bao_by_target[c.meta.target_id].push_back(&c);
      continue;
    }
    by_strategy[c.meta.strategy].push_back(&c);
    targets.insert(c.meta.target_id);
  }
  std::vector<std::string> strategies;
  for (const auto& [name, _] : by_strategy) strategies.push_back(name);
  std::stable_sort(strategies.begin(), strategies.end(),
                   [](const auto& x, const auto& y) { return strategy_order(x) < strategy_order(y); });

  auto of_target = [](std::span<const LearningCurve* const> cs, const std::string& target) {
    std::vector<const LearningCurve*> out;
    for (const auto* c : cs) {
      if (c->meta.target_id == target) out.push_back(c);
    }
    return out;
  };

  const auto ref_it = by_strategy.find(s.reference_strategy);
  for (const auto& name : strategies) {
    const auto& all = by_strategy[name];
    auto overall = aggregate(name, "", all, fractions);
    if (ref_it != by_strategy.end() && name != s.reference_strategy) {
      overall.versus_reference = compare(all, ref_it->second, fractions);
    }
    s.rows.push_back(std::move(overall));
    for (const auto& target : targets) {
      const auto mine = of_target(all, target);
      if (mine.empty()) continue;
      auto row = aggregate(name, target, mine, fractions);
      if (ref_it != by_strategy.end() && name != s.reference_strategy) {
        row.versus_reference = compare(mine, of_target(ref_it->second, target), fractions);
      }
      s.rows.push_back(std::move(row));
    }
  }

  for (const auto& [target, cs] : bao_by_target) {
    BaoReference b;
    b.target_id = target;
    double frac = 0.0;
    double au = 0.0;
    std::size_t defined = 0;
    for (const auto* c : cs) {
      for (const auto& p : c->points) {
        frac += p.fraction;
        ++b.runs;
        if (p.auroc) {
          au += *p.auroc;
          ++defined;
        } else {
          ++b.undefined_cells;
        }
      }
    }
    if (b.runs > 0) b.mean_selected_fraction = frac / static_cast<double>(b.runs);
    if (defined > 0) b.mean_auroc = au / static_cast<double>(defined);
    s.bao.push_back(std::move(b));
  }
  return s;
}

}  // namespace assaysel
