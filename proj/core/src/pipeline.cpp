#include "assaysel/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "assaysel/analysis.hpp"
#include "assaysel/embedding_provider.hpp"
#include "assaysel/error.hpp"
#include "assaysel/io.hpp"
#include "assaysel/parallel.hpp"
#include "assaysel/report.hpp"
#include "assaysel/rng.hpp"
#include "assaysel/synthdata.hpp"

namespace assaysel {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::kSynth: return "synth";
    case Stage::kTrak: return "trak";
    case Stage::kFinetune: return "finetune";
    case Stage::kSelect: return "select";
    case Stage::kEvaluate: return "evaluate";
    case Stage::kAnalyze: return "analyze";
    case Stage::kReport: return "report";
  }
  return "unknown";
}

Stage parse_stage(std::string_view name) {
  for (auto s : kAllStages) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("unknown stage '" + std::string(name) + "'");
}

std::string manifest_hash(const RunConfig& config) { return io::fnv1a_hex(canonical_config_text(config)); }

std::uint64_t target_tag(std::string_view target_id) {
  return std::stoull(io::fnv1a_hex(target_id), nullptr, 16);
}

namespace {

// Seed domains, so that no two stages ever share a random stream.
constexpr std::uint64_t kWorldTag = 0x3701;
constexpr std::uint64_t kSplitTag = 0x3702;
constexpr std::uint64_t kTrakTag = 0x3703;
constexpr std::uint64_t kHeadTag = 0x3704;
constexpr std::uint64_t kRunTag = 0x3705;
constexpr std::uint64_t kClusterTag = 0x3706;
constexpr std::string_view kJointScope = "joint";

std::vector<std::string> concat(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::string> out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

std::string read_stamped(const fs::path& file, std::string_view hash) {
  const auto text = io::read_file(file);
  check_artifact_stamp(text, hash, file);
  return text.substr(artifact_stamp(hash).size());
}

ordered_json read_json(const fs::path& file, std::string_view hash) {
  ordered_json j;
  try {
    j = ordered_json::parse(io::read_file(file));
  } catch (const ordered_json::parse_error& e) {
    throw DataError(DataErrc::kMalformedRow, file.string() + ": " + e.what());
  }
  if (!j.contains("manifest_hash") || j["manifest_hash"] != hash) {
    throw DataError(DataErrc::kManifestMismatch, file.string() + " was written by a different run");
  }
  return j;
}

std::string format_assay_trak_csv(const AssayTrakMatrix& m, std::string_view hash) {
  std::string out = artifact_stamp(hash);
  out += "train_assay,eval_assay,score\n";
  for (std::size_t r = 0; r < m.train_assays.size(); ++r) {
    for (std::size_t c = 0; c < m.eval_assays.size(); ++c) {
      const double v = m.scores(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
      const std::vector<std::string> row{m.train_assays[r], m.eval_assays[c],
                                         std::isnan(v) ? "" : io::format_double(v)};
      io::append_csv_row(out, row);
    }
  }
  return out;
}

AssayTrakMatrix parse_assay_trak_csv(std::string_view text, const fs::path& source) {
  const auto table = io::parse_csv(text);
  const auto name = source.string();
  const auto ct = table.column("train_assay", name);
  const auto ce = table.column("eval_assay", name);
  const auto cs = table.column("score", name);
  AssayTrakMatrix m;
  std::map<std::string, std::size_t, std::less<>> rows;
  std::map<std::string, std::size_t, std::less<>> cols;
  std::vector<std::tuple<std::size_t, std::size_t, double>> cells;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& r = table.rows[i];
    const auto where = name + ":" + std::to_string(table.lines[i]);
    if (r.size() != table.header.size()) throw DataError(DataErrc::kMalformedRow, where + ": wrong field count");
    auto [ri, new_row] = rows.try_emplace(r[ct], m.train_assays.size());
    if (new_row) m.train_assays.push_back(r[ct]);
    auto [ci, new_col] = cols.try_emplace(r[ce], m.eval_assays.size());
    if (new_col) m.eval_assays.push_back(r[ce]);
    cells.emplace_back(ri->second, ci->second, r[cs].empty() ? std::nan("") : io::parse_double(r[cs], where));
  }
  m.scores = Matrix::Constant(static_cast<Eigen::Index>(m.train_assays.size()),
                              static_cast<Eigen::Index>(m.eval_assays.size()), std::nan(""));
  for (const auto& [r, c, v] : cells) m.scores(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
  return m;
}

ordered_json splits_to_json(const std::string& target, const std::vector<SplitSpec>& splits, std::string_view hash) {
  ordered_json j;
  j["manifest_hash"] = hash;
  j["target"] = target;
  ordered_json arr = ordered_json::array();
  for (const auto& s : splits) {
    ordered_json o;
    o["index"] = s.index;
    o["seed"] = s.seed;
    o["test_share"] = s.test_share;
    o["train"] = s.train_ids;
    o["test"] = s.test_ids;
    o["sampled_test"] = s.sampled_test;
    arr.push_back(std::move(o));
  }
  j["splits"] = std::move(arr);
  return j;
}

fs::path select_file(const fs::path& dir, std::size_t split, std::optional<std::size_t> run,
                     const std::string& test) {
  std::string name = "split" + std::to_string(split);
  if (run) name += "_run" + std::to_string(*run);
  return dir / (name + "_" + test + ".csv");
}

}  // namespace

AssayTrakMatrix split_assay_trak(const AssayCollection& collection, const SplitSpec& split,
                                 const TrakConfig& config, TrakMatrix* molecules) {
  const auto train = AttributionSet::from_assays(collection, split.train_ids);
  const auto eval = AttributionSet::from_assays(collection, concat(split.train_ids, split.test_ids));
  auto matrix = trak_scores(train, eval, config);
  auto assay = assay_trak_matrix(matrix);
  if (molecules) *molecules = std::move(matrix);
  return assay;
}

AssayTrakMatrix train_block(const AssayTrakMatrix& matrix) {
  AssayTrakMatrix out;
  out.train_assays = matrix.train_assays;
  std::vector<Eigen::Index> cols;
  for (const auto& id : matrix.train_assays) {
    const auto c = matrix.eval_index(id);
    if (!c) throw DataError(DataErrc::kUnknownAssay, "train assay " + id + " missing from TRAK columns");
    out.eval_assays.push_back(id);
    cols.push_back(static_cast<Eigen::Index>(*c));
  }
  out.scores.resize(matrix.scores.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    out.scores.col(static_cast<Eigen::Index>(j)) = matrix.scores.col(cols[j]);
  }
  return out;
}

SplitFinetuneInput finetune_input(const AssayCollection& collection, const SplitSpec& split,
                                  const AssayTrakMatrix& train_trak) {
  SplitFinetuneInput in;
  in.rankings = anchor_rankings(train_trak);
  for (const auto& id : split.train_ids) in.raw.emplace(id, collection.embedding(id).raw);
  return in;
}

// ---------------------------------------------------------------------------

Pipeline::Pipeline(RunConfig config, RunOptions options)
    : config_(std::move(config)), options_(std::move(options)) {
  config_.validate();
  if (options_.run_dir.empty()) throw ConfigError("a run directory is required");
  options_.jobs = std::max<std::size_t>(1, options_.jobs);
  hash_ = assaysel::manifest_hash(config_);
  const auto manifest = path("manifest.json");
  if (fs::exists(manifest)) {
    ordered_json j;
    try {
      j = ordered_json::parse(io::read_file(manifest));
    } catch (const ordered_json::parse_error& e) {
      throw DataError(DataErrc::kMalformedRow, manifest.string() + ": " + e.what());
    }
    if (j.value("manifest_hash", "") != hash_) {
      if (!options_.force) {
        throw DataError(DataErrc::kManifestMismatch,
                        "run directory " + options_.run_dir.string() +
                            " belongs to a different configuration; use a fresh --run-dir or pass --force");
      }
    } else {
      for (const auto& s : j.value("stages", std::vector<std::string>{})) completed_.push_back(parse_stage(s));
    }
  }
  write_manifest();
}

fs::path Pipeline::path(const fs::path& relative) const { return options_.run_dir / relative; }

bool Pipeline::is_complete(Stage stage) const {
  return std::find(completed_.begin(), completed_.end(), stage) != completed_.end();
}

void Pipeline::write_manifest() const {
  ordered_json j;
  j["manifest_hash"] = hash_;
  j["seed"] = config_.seed;
  j["config"] = canonical_config_text(config_);
  std::vector<std::string> stages;
  for (auto s : kAllStages) {
    if (is_complete(s)) stages.emplace_back(to_string(s));
  }
  j["stages"] = stages;
  io::write_file(path("manifest.json"), j.dump(2) + "\n");
}

StageOutcome Pipeline::run(Stage stage) {
  for (auto s : kAllStages) {
    if (s == stage) break;
    if (!is_complete(s)) {
      throw MissingStageError(std::string(to_string(s)),
                              "stage '" + std::string(to_string(stage)) + "' needs the output of '" +
                                  std::string(to_string(s)) + "'; run `assaysel " + std::string(to_string(s)) +
                                  "` (or `assaysel all`) against this run directory first");
    }
  }
  if (is_complete(stage) && !options_.force) return {stage, true};

  // Rerunning a stage makes everything downstream stale.
  std::erase_if(completed_, [&](Stage s) { return s >= stage; });
  write_manifest();
  switch (stage) {
    case Stage::kSynth: run_synth(); break;
    case Stage::kTrak: run_trak(); break;
    case Stage::kFinetune: run_finetune(); break;
    case Stage::kSelect: run_select(); break;
    case Stage::kEvaluate: run_evaluate(); break;
    case Stage::kAnalyze: run_analyze(); break;
    case Stage::kReport: run_report(); break;
  }
  completed_.push_back(stage);
  write_manifest();
  return {stage, false};
}

std::vector<StageOutcome> Pipeline::run_all() {
  std::vector<StageOutcome> out;
  for (auto s : kAllStages) out.push_back(run(s));
  return out;
}

std::uint64_t Pipeline::run_seed(const std::string& target, std::size_t split, std::size_t run) const {
  return derive_seed(config_.seed, {kRunTag, target_tag(target), split, run});
}

// ---------------------------------------------------------------------------
// synth: produce (or import) the data and fix the splits.

void Pipeline::run_synth() {
  std::vector<AssayCollection> collections;
  if (config_.data.source == DataSource::kSynth) {
    for (std::size_t t = 0; t < config_.synth.n_targets; ++t) {
      WorldConfig w = config_.synth.world;
      w.target_id = "SYN" + std::to_string(t + 1);
      w.seed = derive_seed(config_.seed, {kWorldTag, t});
      collections.push_back(generate_world(w).collection);
    }
  } else {
    for (auto& c : parse_assay_tables(config_.data.assays, config_.data.measurements)) {
      EmbeddingSource source = config_.data.embeddings_from == EmbeddingSourceKind::kFile
                                   ? EmbeddingSource(EmbeddingFileSource{config_.data.embeddings})
                                   : EmbeddingSource(EmbeddingHttpSource{config_.data.provider});
      if (config_.target && c.target_id() != *config_.target) continue;
      collections.push_back(c.with_embeddings(load_embeddings(source, c)));
    }
  }
  if (config_.target) {
    std::erase_if(collections, [&](const AssayCollection& c) { return c.target_id() != *config_.target; });
    if (collections.empty()) throw ConfigError("target '" + *config_.target + "' is not in the data");
  }

  const auto [assays, measurements] = format_assay_tables(collections);
  const auto stamp = artifact_stamp(hash_);
  io::write_file(path("data/assays.csv"), stamp + assays);
  io::write_file(path("data/measurements.csv"), stamp + measurements);
  EmbeddingMap all;
  for (const auto& c : collections) {
    for (const auto& [id, rec] : c.embeddings()) all.emplace(id, rec);
  }
  io::write_file(path("data/embeddings.csv"), stamp + format_embeddings_csv(all, false));

  for (const auto& c : collections) {
    const auto splits = make_splits(c, config_.evaluate.n_splits,
                                    derive_seed(config_.seed, {kSplitTag, target_tag(c.target_id())}),
                                    config_.evaluate.split);
    for (const auto& s : splits) check_split(c, s);
    io::write_file(path("data/splits_" + c.target_id() + ".json"),
                   splits_to_json(c.target_id(), splits, hash_).dump(2) + "\n");
  }
}

std::vector<AssayCollection> Pipeline::load_collections() const {
  const auto assays = read_stamped(path("data/assays.csv"), hash_);
  const auto measurements = read_stamped(path("data/measurements.csv"), hash_);
  const auto embeddings = parse_embeddings_csv(read_stamped(path("data/embeddings.csv"), hash_),
                                               path("data/embeddings.csv").string());
  auto collections = parse_assay_tables_text(assays, measurements);
  for (auto& c : collections) {
    EmbeddingMap mine;
    for (const auto& a : c.assays()) {
      const auto it = embeddings.find(a.assay_id);
      if (it == embeddings.end()) {
        throw DataError(DataErrc::kMissingEmbedding, "assay " + a.assay_id + " has no embedding in the run data");
      }
      mine.emplace(it->first, it->second);
    }
    c = c.with_embeddings(std::move(mine));
  }
  return collections;
}

std::vector<SplitSpec> Pipeline::load_splits(const std::string& target) const {
  const auto j = read_json(path("data/splits_" + target + ".json"), hash_);
  std::vector<SplitSpec> out;
  for (const auto& o : j.at("splits")) {
    SplitSpec s;
    s.index = o.at("index").get<std::size_t>();
    s.seed = o.at("seed").get<std::uint64_t>();
    s.test_share = o.at("test_share").get<double>();
    s.train_ids = o.at("train").get<std::vector<std::string>>();
    s.test_ids = o.at("test").get<std::vector<std::string>>();
    s.sampled_test = o.at("sampled_test").get<std::vector<std::string>>();
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// trak: per-assay attribution for every split.

void Pipeline::run_trak() {
  for (const auto& c : load_collections()) {
    for (const auto& split : load_splits(c.target_id())) {
      TrakConfig tc = config_.trak;
      tc.member = config_.trak.member;
      tc.seed = derive_seed(config_.seed, {kTrakTag, target_tag(c.target_id()), split.index});
      tc.jobs = options_.jobs;
      TrakMatrix molecules;
      const auto assay = split_assay_trak(c, split, tc, split.index == 0 ? &molecules : nullptr);
      const fs::path dir = path("trak") / c.target_id();
      io::write_file(dir / ("split" + std::to_string(split.index) + "_assay.csv"), format_assay_trak_csv(assay, hash_));
      if (split.index == 0) save_trak_matrix(molecules, dir / "split0.trakmat", tc, hash_);
    }
  }
}

AssayTrakMatrix Pipeline::load_assay_trak(const std::string& target, std::size_t split) const {
  const auto file = path("trak") / target / ("split" + std::to_string(split) + "_assay.csv");
  return parse_assay_trak_csv(read_stamped(file, hash_), file);
}

// ---------------------------------------------------------------------------
// finetune: one head per (target, split), or per split across targets.

fs::path Pipeline::head_stem(const std::string& target, std::size_t split) const {
  const std::string scope = config_.finetune.joint_targets ? std::string(kJointScope) : target;
  return path("finetune") / scope / ("split" + std::to_string(split) + ".head");
}

HeadParams Pipeline::load_split_head(const std::string& target, std::size_t split) const {
  const auto stem = head_stem(target, split);
  const auto sidecar = read_json(fs::path(stem).concat(".json"), hash_);
  (void)sidecar;
  return load_head(stem);
}

void Pipeline::run_finetune() {
  const auto collections = load_collections();
  std::vector<std::vector<SplitSpec>> splits;
  for (const auto& c : collections) splits.push_back(load_splits(c.target_id()));
  const std::size_t n_splits = config_.evaluate.n_splits;

  struct Job {
    std::vector<std::size_t> targets;
    std::size_t split;
    std::string scope;
  };
  std::vector<Job> jobs;
  if (config_.finetune.joint_targets) {
    std::vector<std::size_t> all(collections.size());
    for (std::size_t t = 0; t < all.size(); ++t) all[t] = t;
    for (std::size_t s = 0; s < n_splits; ++s) jobs.push_back({all, s, std::string(kJointScope)});
  } else {
    for (std::size_t t = 0; t < collections.size(); ++t) {
      for (std::size_t s = 0; s < n_splits; ++s) jobs.push_back({{t}, s, collections[t].target_id()});
    }
  }

  std::vector<HeadTrainResult> heads(jobs.size());
  parallel_for(jobs.size(), options_.jobs, [&](std::size_t i) {
    const auto& job = jobs[i];
    std::vector<AnchorRanking> rankings;
    RawEmbeddings raw;
    for (auto t : job.targets) {
      const auto& c = collections[t];
      auto in = finetune_input(c, splits[t][job.split], train_block(load_assay_trak(c.target_id(), job.split)));
      rankings.insert(rankings.end(), in.rankings.begin(), in.rankings.end());
      raw.merge(in.raw);
    }
    FinetuneConfig fc = config_.finetune;
    fc.seed = derive_seed(config_.seed, {kHeadTag, target_tag(job.scope), job.split});
    const auto sample = sample_triplets(rankings, fc);
    heads[i] = train_head(raw, sample.triplets, fc);
  });

  for (std::size_t i = 0; i < jobs.size(); ++i) {
    FinetuneConfig fc = config_.finetune;
    fc.seed = derive_seed(config_.seed, {kHeadTag, target_tag(jobs[i].scope), jobs[i].split});
    const auto stem = path("finetune") / jobs[i].scope / ("split" + std::to_string(jobs[i].split) + ".head");
    save_head(heads[i], fc, stem, hash_);
    for (auto t : jobs[i].targets) {
      const auto& c = collections[t];
      EmbeddingMap tuned;
      for (const auto& [id, rec] : c.embeddings()) {
        EmbeddingRecord r{id, rec.raw, embed(heads[i].head, rec.raw)};
        tuned.emplace(id, std::move(r));
      }
      io::write_file(path("finetune") / c.target_id() / ("split" + std::to_string(jobs[i].split) + "_embeddings.csv"),
                     artifact_stamp(hash_) + format_embeddings_csv(tuned, true));
    }
  }
}

// ---------------------------------------------------------------------------
// select: ranked training assays per sampled test assay.

void Pipeline::run_select() {
  for (const auto& c : load_collections()) {
    for (const auto& split : load_splits(c.target_id())) {
      const auto candidates = split_candidates(c, split);
      std::optional<HeadParams> head;
      for (auto strategy : config_.select.strategies) {
        if (strategy == StrategyKind::kAssayMatch && !head) head = load_split_head(c.target_id(), split.index);
        const fs::path dir = path("select") / c.target_id() / std::string(to_string(strategy));
        const std::size_t runs = strategy == StrategyKind::kRandom ? config_.evaluate.n_runs : 1;
        for (std::size_t run = 0; run < runs; ++run) {
          for (std::size_t t = 0; t < split.sampled_test.size(); ++t) {
            std::string body;
            try {
              const auto ranking = rank_for_test(c, candidates, split, t, strategy, head ? &*head : nullptr,
                                                 config_.select.normalize_raw,
                                                 run_seed(c.target_id(), split.index, run));
              body = format_ranked_selection_csv(ranking);
              for (const auto& w : ranking.warnings) body = "# warning: " + w + "\n" + body;
            } catch (const DataError& e) {
              if (strategy != StrategyKind::kBaoExact || e.code() != DataErrc::kMalformedRow) throw;
              body = "# warning: " + std::string(e.what()) + "\nrank,assay_id,score,cum_measurements\n";
            }
            const auto run_tag = strategy == StrategyKind::kRandom ? std::optional(run) : std::nullopt;
            io::write_file(select_file(dir, split.index, run_tag, split.sampled_test[t]),
                           artifact_stamp(hash_) + body);
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// evaluate: the (target, split, run, strategy) grid of learning curves.

void Pipeline::run_evaluate() {
  const auto collections = load_collections();
  struct Cell {
    std::size_t target;
    std::size_t split;
    std::size_t run;
    StrategyKind strategy;
  };
  std::vector<std::vector<SplitSpec>> splits;
  std::vector<std::vector<std::optional<HeadParams>>> heads;
  const bool need_head = std::find(config_.select.strategies.begin(), config_.select.strategies.end(),
                                   StrategyKind::kAssayMatch) != config_.select.strategies.end();
  std::vector<Cell> cells;
  for (std::size_t t = 0; t < collections.size(); ++t) {
    splits.push_back(load_splits(collections[t].target_id()));
    heads.emplace_back();
    for (const auto& s : splits[t]) {
      heads[t].push_back(need_head ? std::optional(load_split_head(collections[t].target_id(), s.index))
                                   : std::nullopt);
      for (std::size_t run = 0; run < config_.evaluate.n_runs; ++run) {
        for (auto strategy : config_.select.strategies) cells.push_back({t, s.index, run, strategy});
      }
    }
  }

  CurveConfig cc;
  cc.fractions = config_.evaluate.fractions;
  cc.unit = config_.select.unit;
  cc.macro = config_.evaluate.macro;
  cc.normalize_raw = config_.select.normalize_raw;
  cc.predictor = config_.predictor;
  cc.jobs = 1;

  std::vector<LearningCurve> curves(cells.size());
  parallel_for(cells.size(), options_.jobs, [&](std::size_t i) {
    const auto& cell = cells[i];
    const auto& c = collections[cell.target];
    const auto& head = heads[cell.target][cell.split];
    curves[i] = run_learning_curve(c, splits[cell.target][cell.split], cell.strategy, head ? &*head : nullptr, cc,
                                   cell.run, run_seed(c.target_id(), cell.split, cell.run));
  });
  for (const auto& curve : curves) {
    const auto& m = curve.meta;
    io::write_file(path("results") / m.target_id / m.strategy /
                       ("curve_split" + std::to_string(m.split) + "_run" + std::to_string(m.run) + ".csv"),
                   format_curve_csv(curve, hash_));
  }
}

// ---------------------------------------------------------------------------
// analyze: diagnostics on the first split of every target.

void Pipeline::run_analyze() {
  const auto& ac = config_.analysis;
  for (const auto& c : load_collections()) {
    const auto splits = load_splits(c.target_id());
    const auto& split = splits.front();
    const auto trak = load_assay_trak(c.target_id(), split.index);
    const auto train_trak = train_block(trak);
    const auto head = load_split_head(c.target_id(), split.index);
    const fs::path dir = path("analysis") / c.target_id();
    const auto stamp = artifact_stamp(hash_);

    const auto& ids = split.train_ids;
    Matrix raw(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(c.embedding_dim()));
    RawEmbeddings raw_map;
    RawEmbeddings tuned_map;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto& e = c.embedding(ids[i]).raw;
      raw.row(static_cast<Eigen::Index>(i)) = e.transpose();
      raw_map.emplace(ids[i], e);
      tuned_map.emplace(ids[i], embed(head, e));
    }
    Matrix tuned(raw.rows(), static_cast<Eigen::Index>(head.output_dim));
    for (std::size_t i = 0; i < ids.size(); ++i) tuned.row(static_cast<Eigen::Index>(i)) = tuned_map[ids[i]].transpose();

    const std::size_t k = std::min(ac.k, ids.size());
    const auto clusters = kmeans(raw, k, derive_seed(config_.seed, {kClusterTag, target_tag(c.target_id())}));
    const std::size_t dims = std::min(ac.pca_dims, ids.size() - 1);
    const auto pca_raw = pca_project(raw, dims);
    const auto pca_tuned = pca_project(tuned, dims);
    io::write_file(dir / "pca_raw.csv", stamp + format_pca_csv(ids, pca_raw, clusters.assignments));
    io::write_file(dir / "pca_finetuned.csv", stamp + format_pca_csv(ids, pca_tuned, clusters.assignments));

    const auto heatmap = cluster_trak_heatmap(ids, clusters.assignments, k, train_trak);
    io::write_file(dir / "heatmap.csv", stamp + format_heatmap_csv(heatmap));

    const auto shifts = largest_shift_pairs(raw_map, tuned_map, ac.top_shift_pairs, ac.normalize_raw);
    io::write_file(dir / "shift_pairs.csv", stamp + format_shift_pairs_csv(shifts, c));

    // Size-weighted TRAK of each strategy's selection at the analysis fraction.
    const auto candidates = split_candidates(c, split);
    std::string sel_csv = stamp + "test_assay,strategy,n_selected,weighted_trak\n";
    std::map<std::string, std::pair<double, std::size_t>> means;
    for (auto strategy : config_.select.strategies) {
      for (std::size_t t = 0; t < split.sampled_test.size(); ++t) {
        RankedSelection ranking;
        try {
          ranking = rank_for_test(c, candidates, split, t, strategy, &head, config_.select.normalize_raw,
                                  run_seed(c.target_id(), split.index, 0));
        } catch (const DataError& e) {
          if (strategy != StrategyKind::kBaoExact || e.code() != DataErrc::kMalformedRow) throw;
          continue;
        }
        const auto chosen = select_subset(ranking, ac.selection_fraction, config_.select.unit);
        if (chosen.empty()) continue;
        const double w = weighted_selection_trak(chosen, split.sampled_test[t], trak, c);
        const std::vector<std::string> row{split.sampled_test[t], std::string(to_string(strategy)),
                                           std::to_string(chosen.size()), io::format_double(w)};
        io::append_csv_row(sel_csv, row);
        if (std::isfinite(w)) {
          auto& m = means[std::string(to_string(strategy))];
          m.first += w;
          ++m.second;
        }
      }
    }
    io::write_file(dir / "selection_trak.csv", sel_csv);

    ordered_json j;
    j["manifest_hash"] = hash_;
    j["target"] = c.target_id();
    j["split"] = split.index;
    j["k"] = k;
    j["kmeans_iterations"] = clusters.iterations;
    j["kmeans_inertia"] = clusters.inertia();
    j["heatmap_averaging"] = "complete: every ordered pair of distinct train assays, no thresholding";
    const double dd = heatmap.diagonal_dominance();
    j["heatmap_diagonal_minus_offdiagonal"] = std::isfinite(dd) ? ordered_json(dd) : ordered_json(nullptr);
    j["pca_raw_explained_ratio"] = std::vector<double>(pca_raw.explained_ratio.data(),
                                                       pca_raw.explained_ratio.data() + pca_raw.explained_ratio.size());
    j["pca_finetuned_explained_ratio"] = std::vector<double>(
        pca_tuned.explained_ratio.data(), pca_tuned.explained_ratio.data() + pca_tuned.explained_ratio.size());
    j["shift_raw_space"] = ac.normalize_raw ? "euclidean on L2-normalized raw vectors" : "euclidean on raw vectors";
    j["selection_fraction"] = ac.selection_fraction;
    ordered_json sel;
    for (auto strategy : config_.select.strategies) {
      const auto it = means.find(std::string(to_string(strategy)));
      sel[std::string(to_string(strategy))] =
          it == means.end() ? ordered_json(nullptr) : ordered_json(it->second.first / static_cast<double>(it->second.second));
    }
    j["mean_weighted_selection_trak"] = std::move(sel);
    io::write_file(dir / "analysis.json", j.dump(2) + "\n");
  }
}

// ---------------------------------------------------------------------------
// report: summary and plots from the curve files alone.

void Pipeline::run_report() {
  const auto collections = load_collections();
  std::vector<LearningCurve> curves;
  for (const auto& c : collections) {
    for (auto strategy : config_.select.strategies) {
      for (std::size_t s = 0; s < config_.evaluate.n_splits; ++s) {
        for (std::size_t run = 0; run < config_.evaluate.n_runs; ++run) {
          const auto file = path("results") / c.target_id() / std::string(to_string(strategy)) /
                            ("curve_split" + std::to_string(s) + "_run" + std::to_string(run) + ".csv");
          curves.push_back(parse_curve_csv(io::read_file(file), hash_, file));
        }
      }
    }
  }
  const auto summary = summarize(curves, config_.evaluate.fractions, config_.evaluate.reference);
  ReportMetadata meta;
  meta.manifest_hash = hash_;
  meta.pooling = config_.evaluate.macro ? "macro" : "micro";
  meta.size_unit = config_.select.unit == SizeUnit::kMeasurements ? "measurements" : "assays";
  meta.architecture = std::string(to_string(config_.predictor.arch));
  for (const auto& c : collections) meta.targets.emplace_back(c.target_id(), collection_stats(c));
  io::write_file(path("results/summary.json"), format_summary_json(summary, meta));
  for (const auto& c : collections) {
    io::write_file(path("results") / c.target_id() / "curves.svg",
                   render_learning_curve_svg(c.target_id(), summary, hash_));
  }
}

}  // namespace assaysel
