#include "assaysel/finetune.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "assaysel/error.hpp"
#include "assaysel/io.hpp"
#include "assaysel/rng.hpp"

namespace assaysel {

void FinetuneConfig::validate() const {
  if (!(margin > 0.0)) throw ConfigError("finetune margin must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("finetune learning_rate must be positive");
  if (batch_size == 0) throw ConfigError("finetune batch_size must be positive");
  if (hidden_dim == 0 || output_dim == 0) throw ConfigError("finetune dims must be >= 1");
  if (triplets_per_anchor == 0) throw ConfigError("triplets_per_anchor must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must be in [0, 1)");
  }
}

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Ptr>
struct HeadViewT {
  using MatMap = std::conditional_t<std::is_const_v<std::remove_pointer_t<Ptr>>,
                                    Eigen::Map<const RowMajor>, Eigen::Map<RowMajor>>;
  using VecMap = std::conditional_t<std::is_const_v<std::remove_pointer_t<Ptr>>,
                                    Eigen::Map<const Vector>, Eigen::Map<Vector>>;
  MatMap w1;
  VecMap b1;
  MatMap w2;
  VecMap b2;

  HeadViewT(Ptr data, std::size_t in, std::size_t hid, std::size_t out)
      : w1(data, static_cast<Eigen::Index>(hid), static_cast<Eigen::Index>(in)),
        b1(data + hid * in, static_cast<Eigen::Index>(hid)),
        w2(data + hid * in + hid, static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(hid)),
        b2(data + hid * in + hid + out * hid, static_cast<Eigen::Index>(out)) {}
};

using ConstHeadView = HeadViewT<const double*>;
using HeadView = HeadViewT<double*>;

ConstHeadView view(const HeadParams& h) {
  return ConstHeadView(h.theta.data(), h.input_dim, h.hidden_dim, h.output_dim);
}

struct Forward {
  Matrix inputs;      // D x B
  Matrix hidden_pre;  // H x B
  Matrix hidden;      // H x B
  Matrix out;         // O x B, before normalization
  Vector norms;       // B
  Matrix unit;        // O x B
};

Forward forward(const HeadParams& head, Matrix inputs) {
  const auto v = view(head);
  Forward f;
  f.inputs = std::move(inputs);
  f.hidden_pre = (v.w1 * f.inputs).colwise() + v.b1;
  f.hidden = f.hidden_pre.cwiseMax(0.0);
  f.out = (v.w2 * f.hidden).colwise() + v.b2;
  f.norms = f.out.colwise().norm().transpose();
  f.unit = f.out;
  for (Eigen::Index c = 0; c < f.unit.cols(); ++c) {
    if (f.norms[c] > 0.0) f.unit.col(c) /= f.norms[c];
  }
  return f;
}

const Vector& lookup(const RawEmbeddings& raw, const std::string& id) {
  auto it = raw.find(id);
  if (it == raw.end()) throw DataError(DataErrc::kMissingEmbedding, "no raw embedding for " + id);
  return it->second;
}

// Columns: anchors, then positives, then negatives.
Matrix stack_triplets(const HeadParams& head, const RawEmbeddings& raw,
                      std::span<const Triplet> triplets) {
  const auto t = static_cast<Eigen::Index>(triplets.size());
  Matrix x(static_cast<Eigen::Index>(head.input_dim), 3 * t);
  for (Eigen::Index i = 0; i < t; ++i) {
    const auto& tr = triplets[static_cast<std::size_t>(i)];
    const Vector* cols[3] = {&lookup(raw, tr.anchor), &lookup(raw, tr.positive),
                             &lookup(raw, tr.negative)};
    for (Eigen::Index r = 0; r < 3; ++r) {
      if (static_cast<std::size_t>(cols[r]->size()) != head.input_dim) {
        throw DataError(DataErrc::kDimensionMismatch, "raw embedding dimension differs from head input");
      }
      x.col(r * t + i) = *cols[r];
    }
  }
  return x;
}

}  // namespace

std::size_t HeadParams::parameter_count(std::size_t input, std::size_t hidden, std::size_t output) {
  return hidden * input + hidden + output * hidden + output;
}

HeadParams HeadParams::init(std::size_t input, std::size_t hidden, std::size_t output,
                            std::uint64_t seed) {
  if (input == 0 || hidden == 0 || output == 0) throw ConfigError("head dims must be >= 1");
  HeadParams h{input, hidden, output, Vector::Zero(static_cast<Eigen::Index>(parameter_count(input, hidden, output)))};
  HeadView v(h.theta.data(), input, hidden, output);
  Rng rng(derive_seed(seed, {0x4ead}));
  const double s1 = std::sqrt(2.0 / static_cast<double>(input));
  const double s2 = std::sqrt(1.0 / static_cast<double>(hidden));
  for (Eigen::Index r = 0; r < v.w1.rows(); ++r)
    for (Eigen::Index c = 0; c < v.w1.cols(); ++c) v.w1(r, c) = s1 * rng.normal();
  for (Eigen::Index r = 0; r < v.w2.rows(); ++r)
    for (Eigen::Index c = 0; c < v.w2.cols(); ++c) v.w2(r, c) = s2 * rng.normal();
  return h;
}

HeadParams HeadParams::identity(std::size_t input) {
  const std::size_t hidden = 2 * input;
  HeadParams h{input, hidden, input, Vector::Zero(static_cast<Eigen::Index>(parameter_count(input, hidden, input)))};
  HeadView v(h.theta.data(), input, hidden, input);
  const auto d = static_cast<Eigen::Index>(input);
  v.w1.topRows(d).setIdentity();
  v.w1.bottomRows(d) = -Matrix::Identity(d, d);
  v.w2.leftCols(d).setIdentity();
  v.w2.rightCols(d) = -Matrix::Identity(d, d);
  return h;
}

Vector embed(const HeadParams& head, const Eigen::Ref<const Vector>& raw) {
  if (static_cast<std::size_t>(raw.size()) != head.input_dim) {
    throw DataError(DataErrc::kDimensionMismatch,
                    "head expects " + std::to_string(head.input_dim) + "-dim input, got " +
                        std::to_string(raw.size()));
  }
  const auto v = view(head);
  const Vector out = v.w2 * (v.w1 * raw + v.b1).cwiseMax(0.0) + v.b2;
  const double n = out.norm();
  if (!(n > 0.0)) throw ComputeError("head output has zero norm");
  return out / n;
}

TripletSample sample_triplets(std::span<const AnchorRanking> rankings, const FinetuneConfig& config) {
  if (rankings.empty()) throw ComputeError("no anchor rankings to sample triplets from");
  TripletSample out;
  Rng rng(derive_seed(config.seed, {0x7219}));
  for (const auto& [anchor, ranking] : rankings) {
    if (ranking.size() < 2) {
      out.skipped_anchors.push_back(anchor);
      continue;
    }
    const std::size_t n_pos = (ranking.size() + 1) / 2;
    const std::size_t n_neg = ranking.size() - n_pos;
    for (std::size_t i = 0; i < config.triplets_per_anchor; ++i) {
      const auto p = rng.index(n_pos);
      const auto q = n_pos + rng.index(n_neg);
      out.triplets.push_back({anchor, ranking[p], ranking[q]});
    }
  }
  return out;
}

double triplet_loss(double d_ap, double d_an, double margin) {
  return std::max(0.0, d_ap - d_an + margin);
}

double triplet_loss(const HeadParams& head, const Vector& anchor, const Vector& positive,
                    const Vector& negative, double margin) {
  const Vector a = embed(head, anchor);
  return triplet_loss((a - embed(head, positive)).norm(), (a - embed(head, negative)).norm(), margin);
}

TripletBatchLoss triplet_loss_grad(const HeadParams& head, const RawEmbeddings& raw,
                                   std::span<const Triplet> triplets, double margin) {
  TripletBatchLoss out;
  out.grad = Vector::Zero(head.theta.size());
  if (triplets.empty()) return out;
  const auto f = forward(head, stack_triplets(head, raw, triplets));
  const auto t = static_cast<Eigen::Index>(triplets.size());
  const double w = 1.0 / static_cast<double>(t);

  Matrix d_unit = Matrix::Zero(f.unit.rows(), f.unit.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < t; ++i) {
    const auto ua = f.unit.col(i);
    const auto up = f.unit.col(t + i);
    const auto un = f.unit.col(2 * t + i);
    const Vector diff_p = ua - up;
    const Vector diff_n = ua - un;
    const double d_ap = diff_p.norm();
    const double d_an = diff_n.norm();
    const double value = d_ap - d_an + margin;
    if (value <= 0.0) continue;
    total += value;
    if (d_ap > 0.0) {
      d_unit.col(i) += w * diff_p / d_ap;
      d_unit.col(t + i) -= w * diff_p / d_ap;
    }
    if (d_an > 0.0) {
      d_unit.col(i) -= w * diff_n / d_an;
      d_unit.col(2 * t + i) += w * diff_n / d_an;
    }
  }
  out.loss = total * w;

  // Through the normalization u = z / |z|: dz = (g - u (u.g)) / |z|.
  Matrix d_out = d_unit;
  for (Eigen::Index c = 0; c < d_out.cols(); ++c) {
    if (!(f.norms[c] > 0.0)) {
      d_out.col(c).setZero();
      continue;
    }
    const double proj = f.unit.col(c).dot(d_unit.col(c));
    d_out.col(c) = (d_unit.col(c) - proj * f.unit.col(c)) / f.norms[c];
  }
  const auto v = view(head);
  HeadView g(out.grad.data(), head.input_dim, head.hidden_dim, head.output_dim);
  g.w2.noalias() = d_out * f.hidden.transpose();
  g.b2 = d_out.rowwise().sum();
  Matrix d_hidden = v.w2.transpose() * d_out;
  d_hidden = d_hidden.cwiseProduct((f.hidden_pre.array() > 0.0).cast<double>().matrix());
  g.w1.noalias() = d_hidden * f.inputs.transpose();
  g.b1 = d_hidden.rowwise().sum();
  return out;
}

double mean_triplet_loss(const HeadParams& head, const RawEmbeddings& raw,
                         std::span<const Triplet> triplets, double margin) {
  if (triplets.empty()) return 0.0;
  const auto f = forward(head, stack_triplets(head, raw, triplets));
  const auto t = static_cast<Eigen::Index>(triplets.size());
  double total = 0.0;
  for (Eigen::Index i = 0; i < t; ++i) {
    total += triplet_loss((f.unit.col(i) - f.unit.col(t + i)).norm(),
                          (f.unit.col(i) - f.unit.col(2 * t + i)).norm(), margin);
  }
  return total / static_cast<double>(t);
}

double triplet_satisfaction(const HeadParams& head, const RawEmbeddings& raw,
                            std::span<const Triplet> triplets) {
  if (triplets.empty()) return 0.0;
  const auto f = forward(head, stack_triplets(head, raw, triplets));
  const auto t = static_cast<Eigen::Index>(triplets.size());
  std::size_t satisfied = 0;
  for (Eigen::Index i = 0; i < t; ++i) {
    const double d_ap = (f.unit.col(i) - f.unit.col(t + i)).norm();
    const double d_an = (f.unit.col(i) - f.unit.col(2 * t + i)).norm();
    if (d_ap < d_an) ++satisfied;
  }
  return static_cast<double>(satisfied) / static_cast<double>(t);
}

HeadTrainResult train_head(const RawEmbeddings& raw, std::span<const Triplet> triplets,
                           const FinetuneConfig& config) {
  config.validate();
  if (triplets.empty()) throw ComputeError("train_head needs at least one triplet");
  const auto& first = lookup(raw, triplets.front().anchor);
  HeadTrainResult out;
  out.head = HeadParams::init(static_cast<std::size_t>(first.size()), config.hidden_dim,
                              config.output_dim, config.seed);

  // Restrict to embeddings the triplets reference so nothing else is read.
  RawEmbeddings used;
  for (const auto& t : triplets) {
    for (const auto* id : {&t.anchor, &t.positive, &t.negative}) {
      if (!used.contains(*id)) used.emplace(*id, lookup(raw, *id));
    }
  }

  out.loss_history.push_back(mean_triplet_loss(out.head, used, triplets, config.margin));
  Vector m1 = Vector::Zero(out.head.theta.size());
  Vector m2 = Vector::Zero(out.head.theta.size());
  std::vector<Triplet> order(triplets.begin(), triplets.end());
  Rng rng(derive_seed(config.seed, {0xba7c}));
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(std::span<Triplet>(order));
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const auto n = std::min(config.batch_size, order.size() - start);
      const auto lg = triplet_loss_grad(out.head, used, std::span<const Triplet>(order).subspan(start, n),
                                        config.margin);
      ++step;
      m1 = config.beta1 * m1 + (1.0 - config.beta1) * lg.grad;
      m2 = config.beta2 * m2 + (1.0 - config.beta2) * lg.grad.cwiseProduct(lg.grad);
      const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      out.head.theta.array() -= config.learning_rate * (m1.array() / c1) /
                                ((m2.array() / c2).sqrt() + config.epsilon);
    }
    out.loss_history.push_back(mean_triplet_loss(out.head, used, triplets, config.margin));
  }
  return out;
}

void save_head(const HeadTrainResult& result, const FinetuneConfig& config,
               const std::filesystem::path& stem, std::string_view manifest_hash) {
  const auto& h = result.head;
  std::string blob;
  io::append_f64_le(blob, std::span<const double>(h.theta.data(), static_cast<std::size_t>(h.theta.size())));
  auto bin = stem;
  bin += ".bin";
  io::write_file(bin, blob);
  const nlohmann::ordered_json meta = {
      {"input_dim", h.input_dim},
      {"hidden_dim", h.hidden_dim},
      {"output_dim", h.output_dim},
      {"margin", config.margin},
      {"learning_rate", config.learning_rate},
      {"batch_size", config.batch_size},
      {"epochs", config.epochs},
      {"triplets_per_anchor", config.triplets_per_anchor},
      {"seed", config.seed},
      {"optimizer", "adam"},
      {"distance", "euclidean on L2-normalized outputs"},
      {"loss_history", result.loss_history},
      {"manifest_hash", manifest_hash},
  };
  auto json = stem;
  json += ".json";
  io::write_file(json, meta.dump(2) + "\n");
}

HeadParams load_head(const std::filesystem::path& stem) {
  auto json = stem;
  json += ".json";
  auto bin = stem;
  bin += ".bin";
  const auto meta = nlohmann::json::parse(io::read_file(json));
  HeadParams h;
  h.input_dim = meta.at("input_dim").get<std::size_t>();
  h.hidden_dim = meta.at("hidden_dim").get<std::size_t>();
  h.output_dim = meta.at("output_dim").get<std::size_t>();
  const auto n = HeadParams::parameter_count(h.input_dim, h.hidden_dim, h.output_dim);
  const auto blob = io::read_file(bin);
  if (blob.size() != n * sizeof(double)) {
    throw DataError(DataErrc::kDimensionMismatch, "head checkpoint " + bin.string() + " has wrong size");
  }
  const auto values = io::read_f64_le(blob, n);
  h.theta = Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(n));
  return h;
}

}  // namespace assaysel
