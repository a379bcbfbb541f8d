#include "assaysel/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include "assaysel/error.hpp"
#include "assaysel/parallel.hpp"
#include "assaysel/rng.hpp"

namespace assaysel {

void WorldConfig::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (n_assays == 0) throw ConfigError("world needs at least one assay");
  if (min_measurements == 0 || min_measurements > max_measurements) {
    throw ConfigError("world measurement range must satisfy 1 <= min <= max");
  }
  if (feature_dim < 2 || embedding_dim < 2) throw ConfigError("world dims must be >= 2");
  if (n_families < 2) throw ConfigError("world needs at least two families");
  if (!prob(incompatible_fraction) || !prob(incompatible_noise_rate) || !prob(compatible_noise_rate)) {
    throw ConfigError("world probabilities must lie in [0, 1]");
  }
  if (!family_logit_shift.empty() && family_logit_shift.size() != n_families) {
    throw ConfigError("family_logit_shift needs one entry per family");
  }
  if (!family_noise_rate.empty() && family_noise_rate.size() != n_families) {
    throw ConfigError("family_noise_rate needs one entry per family");
  }
  for (double p : family_noise_rate) {
    if (!prob(p)) throw ConfigError("family noise rates must lie in [0, 1]");
  }
  if (activity_scale < 0.0 || activity_noise < 0.0 || embedding_noise < 0.0) {
    throw ConfigError("world scales must be non-negative");
  }
  if (n_bao_labels == 0) throw ConfigError("world needs at least one BAO label");
}

namespace {

Measurement measure(const GroundTruth& truth, std::size_t family, const Vector& x, double noise_draw,
                    bool flip, std::string molecule_id, int& clean_label) {
  const double clean = truth.activity_weights.dot(x) + truth.activity_bias + noise_draw;
  clean_label = clean > 0.0 ? 1 : 0;
  const double measured = clean + truth.family_shift[family];
  int label = measured > 0.0 ? 1 : 0;
  if (flip) label = 1 - label;
  // Potency in log space carries the label: IC50 < 1000 nM iff active.
  const double magnitude = std::abs(measured) + 0.05;
  const double ic50 = kActiveThresholdNm * std::exp(label == 1 ? -magnitude : magnitude);
  return make_measurement(std::move(molecule_id), x, ic50);
}

Vector gaussian_vector(Rng& rng, std::size_t dim, double stddev) {
  Vector v(static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = stddev * rng.normal();
  return v;
}

std::string assay_id(const std::string& target, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "-A%04zu", i);
  return target + buf;
}

}  // namespace

World generate_world(const WorldConfig& config) {
  config.validate();
  Rng rng(derive_seed(config.seed, {0x3041d}));
  GroundTruth truth;
  const std::size_t fam = config.n_families;
  const double w_scale = config.activity_scale / std::sqrt(static_cast<double>(config.feature_dim));
  truth.activity_weights = gaussian_vector(rng, config.feature_dim, w_scale);
  truth.activity_bias = 0.0;

  const double frac = config.incompatible_fraction;
  std::size_t n_inc_fam = 0;
  if (frac >= 1.0) {
    n_inc_fam = fam;
  } else if (frac > 0.0) {
    n_inc_fam = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(frac * static_cast<double>(fam))), 1, fam - 1);
  }
  truth.family_incompatible.assign(fam, false);
  truth.family_shift.assign(fam, 0.0);
  truth.family_noise.assign(fam, config.compatible_noise_rate);
  // The last n_inc_fam families are the incompatible ones.
  for (std::size_t j = 0; j < n_inc_fam; ++j) {
    const std::size_t f = fam - n_inc_fam + j;
    truth.family_incompatible[f] = true;
    truth.family_shift[f] = (j % 2 == 0 ? 1.0 : -1.0) * config.incompatible_logit_shift;
    truth.family_noise[f] = config.incompatible_noise_rate;
  }
  if (!config.family_logit_shift.empty()) truth.family_shift = config.family_logit_shift;
  if (!config.family_noise_rate.empty()) truth.family_noise = config.family_noise_rate;

  const double c_scale = 1.0 / std::sqrt(static_cast<double>(config.embedding_dim));
  for (std::size_t f = 0; f < fam; ++f) {
    truth.family_centroids.push_back(gaussian_vector(rng, config.embedding_dim, c_scale));
  }

  // Exactly round(frac * n) assays are corrupted; families are dealt
  // round-robin within each group, then positions are shuffled.
  const std::size_t n = config.n_assays;
  const auto n_corrupt = n_inc_fam == 0 ? std::size_t{0}
                                        : static_cast<std::size_t>(std::lround(frac * static_cast<double>(n)));
  std::vector<std::size_t> families;
  for (std::size_t i = 0; i < n_corrupt; ++i) families.push_back(fam - n_inc_fam + i % n_inc_fam);
  const std::size_t n_compat_fam = fam - n_inc_fam;
  for (std::size_t i = n_corrupt; i < n; ++i) {
    families.push_back(n_compat_fam == 0 ? (fam - n_inc_fam + i % n_inc_fam) : i % n_compat_fam);
  }
  rng.shuffle(std::span<std::size_t>(families));

  std::vector<AssayRecord> assays;
  for (std::size_t a = 0; a < n; ++a) {
    const std::size_t f = families[a];
    AssayRecord rec;
    rec.assay_id = assay_id(config.target_id, a + 1);
    rec.target_id = config.target_id;
    rec.description = "Synthetic " + config.target_id + " inhibition assay, protocol family F" +
                      std::to_string(f) + ", variant " + std::to_string(a + 1);
    rec.bao_label = "BAO_SYN_" + std::to_string(f % config.n_bao_labels);
    const auto size = config.min_measurements +
                      static_cast<std::size_t>(rng.index(config.max_measurements - config.min_measurements + 1));
    std::vector<int> clean;
    for (std::size_t j = 0; j < size; ++j) {
      const Vector x = gaussian_vector(rng, config.feature_dim, 1.0);
      const double noise = config.activity_noise * rng.normal();
      const bool flip = rng.bernoulli(truth.family_noise[f]);
      int clean_label = 0;
      rec.measurements.push_back(
          measure(truth, f, x, noise, flip, rec.assay_id + "_M" + std::to_string(j + 1), clean_label));
      clean.push_back(clean_label);
    }
    truth.assay_family.push_back(f);
    truth.assay_corrupted.push_back(truth.family_incompatible[f]);
    truth.clean_labels.push_back(std::move(clean));
    assays.push_back(std::move(rec));
  }

  EmbeddingMap embeddings;
  const double e_scale = config.embedding_noise * c_scale;
  for (std::size_t a = 0; a < n; ++a) {
    Vector e = truth.family_centroids[truth.assay_family[a]] + gaussian_vector(rng, config.embedding_dim, e_scale);
    embeddings.emplace(assays[a].assay_id, EmbeddingRecord{assays[a].assay_id, std::move(e), std::nullopt});
  }
  return {AssayCollection::create(config.target_id, std::move(assays), std::move(embeddings)),
          std::move(truth)};
}

std::vector<Measurement> draw_measurements(const WorldConfig& config, const GroundTruth& truth,
                                           std::size_t family, std::size_t count,
                                           std::uint64_t seed, const std::string& id_prefix) {
  if (family >= truth.family_shift.size()) throw ConfigError("family index out of range");
  Rng rng(derive_seed(seed, {0xe7a1, family}));
  std::vector<Measurement> out;
  out.reserve(count);
  for (std::size_t j = 0; j < count; ++j) {
    const Vector x = gaussian_vector(rng, config.feature_dim, 1.0);
    const double noise = config.activity_noise * rng.normal();
    const bool flip = rng.bernoulli(truth.family_noise[family]);
    int clean_label = 0;
    out.push_back(measure(truth, family, x, noise, flip, id_prefix + std::to_string(j + 1), clean_label));
  }
  return out;
}

double retrain_delta_oracle(const AssayCollection& collection, std::span<const std::string> removed,
                            std::span<const Measurement> eval, const TrainConfig& config,
                            std::size_t n_seeds, std::size_t jobs) {
  if (n_seeds == 0) throw ConfigError("oracle needs at least one seed");
  const std::set<std::string, std::less<>> drop(removed.begin(), removed.end());
  std::vector<const Measurement*> full;
  std::vector<const Measurement*> kept;
  for (const auto& a : collection.assays()) {
    for (const auto& m : a.measurements) {
      full.push_back(&m);
      if (!drop.contains(a.assay_id)) kept.push_back(&m);
    }
  }
  if (kept.empty()) throw ComputeError("removing the assays leaves no training data");
  const auto full_data = Dataset::from(std::span<const Measurement* const>(full));
  const auto kept_data = Dataset::from(std::span<const Measurement* const>(kept));
  const auto eval_data = Dataset::from(eval);

  std::vector<double> deltas(n_seeds);
  parallel_for(n_seeds, jobs, [&](std::size_t s) {
    TrainConfig cfg = config;
    cfg.seed = derive_seed(config.seed, {s, 0x0face});
    const auto with = train(full_data, cfg);
    const auto without = train(kept_data, cfg);
    deltas[s] = mean_loss(without.params, eval_data) - mean_loss(with.params, eval_data);
  });
  return std::accumulate(deltas.begin(), deltas.end(), 0.0) / static_cast<double>(n_seeds);
}

WorldConfig attribution_fixture_config(std::uint64_t seed) {
  WorldConfig c;
  c.target_id = "FIX";
  c.n_assays = 6;
  c.min_measurements = 10;
  c.max_measurements = 10;
  c.feature_dim = 4;
  c.n_families = 3;
  c.incompatible_fraction = 1.0 / 3.0;
  c.incompatible_logit_shift = 2.0;
  c.incompatible_noise_rate = 0.4;
  c.activity_scale = 3.0;
  c.activity_noise = 0.3;
  c.embedding_dim = 8;
  c.seed = seed;
  return c;
}

}  // namespace assaysel
