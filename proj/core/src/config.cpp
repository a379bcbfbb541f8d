#include "assaysel/config.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <type_traits>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "assaysel/error.hpp"
#include "assaysel/io.hpp"

namespace assaysel {

namespace pt = boost::property_tree;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto item = trim(s.substr(start, comma == std::string_view::npos ? s.npos : comma - start));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

// Wraps the parsed tree and remembers which keys were read, so leftovers
// can be reported as typos.
class Reader {
 public:
  explicit Reader(pt::ptree tree) : tree_(std::move(tree)) {}

  template <typename Fn>
  static std::invoke_result_t<Fn> wrap(const std::string& s, const std::string& k, Fn&& fn) {
    try {
      return fn();
    } catch (const DataError& e) {
      throw ConfigError("[" + s + "] " + k + ": " + e.what());
    }
  }

  std::optional<std::string> raw(const std::string& section, const std::string& key) {
    known_[section].insert(key);
    const auto sec = tree_.get_child_optional(section);
    if (!sec) return std::nullopt;
    const auto v = sec->get_optional<std::string>(pt::ptree::path_type(key, '\0'));
    if (!v) return std::nullopt;
    return trim(*v);
  }

  std::string where(const std::string& section, const std::string& key) const {
    return "[" + section + "] " + key;
  }

  void get(const std::string& s, const std::string& k, double& out) {
    if (auto v = raw(s, k)) out = wrap(s, k, [&] { return io::parse_double(*v, where(s, k)); });
  }
  void get(const std::string& s, const std::string& k, std::size_t& out) {
    if (auto v = raw(s, k)) out = wrap(s, k, [&] { return static_cast<std::size_t>(io::parse_u64(*v, where(s, k))); });
  }
  void get_u64(const std::string& s, const std::string& k, std::uint64_t& out) {
    if (auto v = raw(s, k)) out = wrap(s, k, [&] { return io::parse_u64(*v, where(s, k)); });
  }
  void get(const std::string& s, const std::string& k, int& out) {
    std::size_t v = static_cast<std::size_t>(out);
    get(s, k, v);
    out = static_cast<int>(v);
  }
  void get(const std::string& s, const std::string& k, bool& out) {
    if (auto v = raw(s, k)) {
      if (*v == "true" || *v == "1" || *v == "yes") {
        out = true;
      } else if (*v == "false" || *v == "0" || *v == "no") {
        out = false;
      } else {
        throw ConfigError(where(s, k) + ": expected true or false, got '" + *v + "'");
      }
    }
  }
  void get(const std::string& s, const std::string& k, std::string& out) {
    if (auto v = raw(s, k)) out = *v;
  }
  void get(const std::string& s, const std::string& k, std::vector<double>& out) {
    if (auto v = raw(s, k)) {
      out.clear();
      for (const auto& item : split_list(*v)) {
        out.push_back(wrap(s, k, [&] { return io::parse_double(item, where(s, k)); }));
      }
    }
  }

  void check_unknown() const {
    for (const auto& [section, body] : tree_) {
      const auto it = known_.find(section);
      if (it == known_.end()) throw ConfigError("unknown config section [" + section + "]");
      for (const auto& [key, _] : body) {
        if (!it->second.contains(key)) throw ConfigError("unknown config key " + where(section, key));
      }
    }
  }

 private:
  pt::ptree tree_;
  std::map<std::string, std::set<std::string>> known_;
};

std::string_view source_name(DataSource s) { return s == DataSource::kSynth ? "synth" : "files"; }
std::string_view embeddings_name(EmbeddingSourceKind k) { return k == EmbeddingSourceKind::kFile ? "file" : "http"; }
std::string_view unit_name(SizeUnit u) { return u == SizeUnit::kMeasurements ? "measurements" : "assays"; }

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += io::format_double(v[i]);
  }
  return out;
}

}  // namespace

void RunConfig::validate() const {
  if (data.source == DataSource::kFiles) {
    if (data.assays.empty() || data.measurements.empty()) {
      throw ConfigError("[data] source = files needs assays and measurements paths");
    }
    if (data.embeddings_from == EmbeddingSourceKind::kFile && data.embeddings.empty()) {
      throw ConfigError("[data] embeddings path is required when embeddings_from = file");
    }
    if (data.embeddings_from == EmbeddingSourceKind::kHttp && data.provider.base_url.empty()) {
      throw ConfigError("[data] base_url is required when embeddings_from = http");
    }
  }
  if (synth.n_targets == 0) throw ConfigError("[synth] n_targets must be positive");
  synth.world.validate();
  predictor.validate();
  trak.validate();
  finetune.validate();
  if (select.strategies.empty()) throw ConfigError("[select] strategies may not be empty");
  if (evaluate.n_splits == 0 || evaluate.n_runs == 0) {
    throw ConfigError("[evaluate] n_splits and n_runs must be positive");
  }
  if (evaluate.fractions.size() < 2) throw ConfigError("[evaluate] needs at least two fractions");
  for (std::size_t i = 0; i < evaluate.fractions.size(); ++i) {
    const double f = evaluate.fractions[i];
    if (!(f > 0.0 && f <= 1.0) || (i && f <= evaluate.fractions[i - 1])) {
      throw ConfigError("[evaluate] fractions must be strictly increasing within (0, 1]");
    }
  }
  if (!(evaluate.split.test_fraction > 0.0 && evaluate.split.test_fraction < 1.0)) {
    throw ConfigError("[evaluate] test_fraction must lie in (0, 1)");
  }
  parse_strategy(evaluate.reference);
  if (analysis.k == 0 || analysis.pca_dims == 0) throw ConfigError("[analysis] k and pca_dims must be positive");
  if (!(analysis.selection_fraction > 0.0 && analysis.selection_fraction <= 1.0)) {
    throw ConfigError("[analysis] selection_fraction must lie in (0, 1]");
  }
}

RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
  pt::ptree tree;
  try {
    std::istringstream in{std::string(text)};
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  Reader r(std::move(tree));
  RunConfig c;

  r.get_u64("run", "seed", c.seed);
  std::string target;
  r.get("run", "target", target);
  if (!target.empty()) c.target = target;

  std::string s = "synth";
  r.get("data", "source", s);
  if (s == "synth") {
    c.data.source = DataSource::kSynth;
  } else if (s == "files") {
    c.data.source = DataSource::kFiles;
  } else {
    throw ConfigError("[data] source must be synth or files, got '" + s + "'");
  }
  auto path = [&](const char* key, std::filesystem::path& out) {
    std::string p;
    r.get("data", key, p);
    if (!p.empty()) out = std::filesystem::path(p).is_absolute() ? std::filesystem::path(p) : base_dir / p;
  };
  path("assays", c.data.assays);
  path("measurements", c.data.measurements);
  path("embeddings", c.data.embeddings);
  s = "file";
  r.get("data", "embeddings_from", s);
  if (s == "file") {
    c.data.embeddings_from = EmbeddingSourceKind::kFile;
  } else if (s == "http") {
    c.data.embeddings_from = EmbeddingSourceKind::kHttp;
  } else {
    throw ConfigError("[data] embeddings_from must be file or http, got '" + s + "'");
  }
  auto& pv = c.data.provider;
  r.get("data", "base_url", pv.base_url);
  r.get("data", "batch_size", pv.batch_size);
  r.get("data", "timeout_seconds", pv.timeout_seconds);
  r.get("data", "max_retries", pv.max_retries);
  r.get("data", "backoff_initial_ms", pv.backoff_initial_ms);
  r.get("data", "backoff_max_ms", pv.backoff_max_ms);
  std::size_t dim = 0;
  r.get("data", "expected_dim", dim);
  if (dim > 0) pv.expected_dim = dim;

  auto& w = c.synth.world;
  r.get("synth", "n_targets", c.synth.n_targets);
  r.get("synth", "n_assays", w.n_assays);
  r.get("synth", "min_measurements", w.min_measurements);
  r.get("synth", "max_measurements", w.max_measurements);
  r.get("synth", "feature_dim", w.feature_dim);
  r.get("synth", "n_families", w.n_families);
  r.get("synth", "incompatible_fraction", w.incompatible_fraction);
  r.get("synth", "incompatible_logit_shift", w.incompatible_logit_shift);
  r.get("synth", "incompatible_noise_rate", w.incompatible_noise_rate);
  r.get("synth", "compatible_noise_rate", w.compatible_noise_rate);
  r.get("synth", "family_logit_shift", w.family_logit_shift);
  r.get("synth", "family_noise_rate", w.family_noise_rate);
  r.get("synth", "activity_scale", w.activity_scale);
  r.get("synth", "activity_noise", w.activity_noise);
  r.get("synth", "embedding_dim", w.embedding_dim);
  r.get("synth", "embedding_noise", w.embedding_noise);
  r.get("synth", "n_bao_labels", w.n_bao_labels);

  auto& p = c.predictor;
  s = "logistic";
  r.get("predictor", "architecture", s);
  p.arch = parse_architecture(s);
  r.get("predictor", "hidden_dim", p.hidden_dim);
  r.get("predictor", "learning_rate", p.learning_rate);
  r.get("predictor", "batch_size", p.batch_size);
  r.get("predictor", "epochs", p.epochs);
  r.get("predictor", "weight_decay", p.weight_decay);
  r.get("predictor", "momentum", p.momentum);

  auto& t = c.trak;
  r.get("trak", "ensemble_size", t.ensemble_size);
  s = std::string(to_string(t.estimator));
  r.get("trak", "estimator", s);
  t.estimator = parse_trak_estimator(s);
  r.get("trak", "ridge", t.ridge);
  std::size_t k = 0;
  r.get("trak", "projection_dim", k);
  if (k > 0) t.projection_dim = k;
  r.get("trak", "subsample_fraction", p.subsample_fraction);
  r.get("trak", "tile_size", t.tile_size);
  r.get("trak", "max_resamples", t.max_resamples);
  t.member = p;

  auto& f = c.finetune;
  r.get("finetune", "margin", f.margin);
  r.get("finetune", "learning_rate", f.learning_rate);
  r.get("finetune", "batch_size", f.batch_size);
  r.get("finetune", "epochs", f.epochs);
  r.get("finetune", "hidden_dim", f.hidden_dim);
  r.get("finetune", "output_dim", f.output_dim);
  r.get("finetune", "triplets_per_anchor", f.triplets_per_anchor);
  r.get("finetune", "joint_targets", f.joint_targets);

  if (auto v = r.raw("select", "strategies")) {
    c.select.strategies.clear();
    for (const auto& name : split_list(*v)) c.select.strategies.push_back(parse_strategy(name));
  }
  s = "measurements";
  r.get("select", "unit", s);
  if (s == "measurements") {
    c.select.unit = SizeUnit::kMeasurements;
  } else if (s == "assays") {
    c.select.unit = SizeUnit::kAssays;
  } else {
    throw ConfigError("[select] unit must be measurements or assays, got '" + s + "'");
  }
  r.get("select", "normalize_raw", c.select.normalize_raw);

  auto& e = c.evaluate;
  r.get("evaluate", "n_splits", e.n_splits);
  r.get("evaluate", "n_runs", e.n_runs);
  r.get("evaluate", "n_test_assays", e.split.n_test_assays);
  r.get("evaluate", "test_fraction", e.split.test_fraction);
  r.get("evaluate", "fractions", e.fractions);
  r.get("evaluate", "macro", e.macro);
  r.get("evaluate", "reference", e.reference);

  auto& a = c.analysis;
  r.get("analysis", "k", a.k);
  r.get("analysis", "pca_dims", a.pca_dims);
  r.get("analysis", "top_shift_pairs", a.top_shift_pairs);
  r.get("analysis", "normalize_raw", a.normalize_raw);
  r.get("analysis", "selection_fraction", a.selection_fraction);

  r.check_unknown();
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const DataError& e) {
    throw ConfigError(std::string("cannot read config: ") + e.what());
  }
  return parse_config(text, path.parent_path());
}

std::string canonical_config_text(const RunConfig& c) {
  std::string out;
  auto section = [&](const char* name) {
    if (!out.empty()) out += '\n';
    out += '[';
    out += name;
    out += "]\n";
  };
  auto kv = [&](const char* key, const std::string& value) {
    out += key;
    out += " = ";
    out += value;
    out += '\n';
  };
  auto num = [](double v) { return io::format_double(v); };
  auto cnt = [](std::size_t v) { return std::to_string(v); };
  auto flag = [](bool v) { return std::string(v ? "true" : "false"); };

  section("run");
  kv("seed", std::to_string(c.seed));
  kv("target", c.target.value_or(""));

  section("data");
  kv("source", std::string(source_name(c.data.source)));
  if (c.data.source == DataSource::kFiles) {
    kv("assays", c.data.assays.generic_string());
    kv("measurements", c.data.measurements.generic_string());
    kv("embeddings_from", std::string(embeddings_name(c.data.embeddings_from)));
    if (c.data.embeddings_from == EmbeddingSourceKind::kFile) {
      kv("embeddings", c.data.embeddings.generic_string());
    } else {
      const auto& pv = c.data.provider;
      kv("base_url", pv.base_url);
      kv("batch_size", cnt(pv.batch_size));
      kv("timeout_seconds", num(pv.timeout_seconds));
      kv("max_retries", std::to_string(pv.max_retries));
      kv("backoff_initial_ms", num(pv.backoff_initial_ms));
      kv("backoff_max_ms", num(pv.backoff_max_ms));
      kv("expected_dim", cnt(pv.expected_dim.value_or(0)));
    }
  }

  if (c.data.source == DataSource::kSynth) {
    const auto& w = c.synth.world;
    section("synth");
    kv("n_targets", cnt(c.synth.n_targets));
    kv("n_assays", cnt(w.n_assays));
    kv("min_measurements", cnt(w.min_measurements));
    kv("max_measurements", cnt(w.max_measurements));
    kv("feature_dim", cnt(w.feature_dim));
    kv("n_families", cnt(w.n_families));
    kv("incompatible_fraction", num(w.incompatible_fraction));
    kv("incompatible_logit_shift", num(w.incompatible_logit_shift));
    kv("incompatible_noise_rate", num(w.incompatible_noise_rate));
    kv("compatible_noise_rate", num(w.compatible_noise_rate));
    kv("family_logit_shift", join_doubles(w.family_logit_shift));
    kv("family_noise_rate", join_doubles(w.family_noise_rate));
    kv("activity_scale", num(w.activity_scale));
    kv("activity_noise", num(w.activity_noise));
    kv("embedding_dim", cnt(w.embedding_dim));
    kv("embedding_noise", num(w.embedding_noise));
    kv("n_bao_labels", cnt(w.n_bao_labels));
  }

  const auto& p = c.predictor;
  section("predictor");
  kv("architecture", std::string(to_string(p.arch)));
  kv("hidden_dim", cnt(p.hidden_dim));
  kv("learning_rate", num(p.learning_rate));
  kv("batch_size", cnt(p.batch_size));
  kv("epochs", cnt(p.epochs));
  kv("weight_decay", num(p.weight_decay));
  kv("momentum", num(p.momentum));

  const auto& t = c.trak;
  section("trak");
  kv("ensemble_size", cnt(t.ensemble_size));
  kv("estimator", std::string(to_string(t.estimator)));
  kv("ridge", num(t.ridge));
  kv("projection_dim", cnt(t.projection_dim.value_or(0)));
  kv("subsample_fraction", num(t.member.subsample_fraction));
  kv("tile_size", cnt(t.tile_size));
  kv("max_resamples", std::to_string(t.max_resamples));

  const auto& f = c.finetune;
  section("finetune");
  kv("margin", num(f.margin));
  kv("learning_rate", num(f.learning_rate));
  kv("batch_size", cnt(f.batch_size));
  kv("epochs", cnt(f.epochs));
  kv("hidden_dim", cnt(f.hidden_dim));
  kv("output_dim", cnt(f.output_dim));
  kv("triplets_per_anchor", cnt(f.triplets_per_anchor));
  kv("joint_targets", flag(f.joint_targets));

  section("select");
  std::string names;
  for (std::size_t i = 0; i < c.select.strategies.size(); ++i) {
    if (i) names += ',';
    names += to_string(c.select.strategies[i]);
  }
  kv("strategies", names);
  kv("unit", std::string(unit_name(c.select.unit)));
  kv("normalize_raw", flag(c.select.normalize_raw));

  const auto& e = c.evaluate;
  section("evaluate");
  kv("n_splits", cnt(e.n_splits));
  kv("n_runs", cnt(e.n_runs));
  kv("n_test_assays", cnt(e.split.n_test_assays));
  kv("test_fraction", num(e.split.test_fraction));
  kv("fractions", join_doubles(e.fractions));
  kv("macro", flag(e.macro));
  kv("reference", e.reference);

  const auto& a = c.analysis;
  section("analysis");
  kv("k", cnt(a.k));
  kv("pca_dims", cnt(a.pca_dims));
  kv("top_shift_pairs", cnt(a.top_shift_pairs));
  kv("normalize_raw", flag(a.normalize_raw));
  kv("selection_fraction", num(a.selection_fraction));
  return out;
}

}  // namespace assaysel
