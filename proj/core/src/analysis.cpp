#include "assaysel/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "assaysel/error.hpp"
#include "assaysel/io.hpp"
#include "assaysel/rng.hpp"

namespace assaysel {

PcaResult pca_project(const Matrix& points, std::size_t dims) {
  const auto n = points.rows();
  if (dims == 0) throw ConfigError("PCA needs at least one component");
  if (n < static_cast<Eigen::Index>(dims) + 1) {
    throw ComputeError("PCA with " + std::to_string(dims) + " components needs at least " +
                       std::to_string(dims + 1) + " points");
  }
  PcaResult r;
  r.mean = points.colwise().mean().transpose();
  const Matrix centered = points.rowwise() - r.mean.transpose();
  Eigen::BDCSVD<Matrix> svd(centered, Eigen::ComputeThinV);
  const Vector var = svd.singularValues().array().square() / static_cast<double>(n - 1);
  r.total_variance = centered.array().square().sum() / static_cast<double>(n - 1);

  const double tol = std::max(r.total_variance, 1e-300) * 1e-12;
  Eigen::Index keep = 0;
  while (keep < var.size() && keep < static_cast<Eigen::Index>(dims) && var[keep] > tol) ++keep;
  r.components = svd.matrixV().leftCols(keep).transpose();
  for (Eigen::Index c = 0; c < keep; ++c) {
    Eigen::Index arg = 0;
    r.components.row(c).cwiseAbs().maxCoeff(&arg);
    if (r.components(c, arg) < 0.0) r.components.row(c) *= -1.0;
  }
  r.coordinates = centered * r.components.transpose();
  r.explained_variance = var.head(keep);
  r.explained_ratio = r.total_variance > 0.0 ? Vector(r.explained_variance / r.total_variance)
                                             : Vector::Zero(keep);
  return r;
}

namespace {

double assign(const Matrix& points, const Matrix& centroids, std::vector<std::size_t>& out) {
  double inertia = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
      const double d = (points.row(i) - centroids.row(c)).squaredNorm();
      if (d < best) {
        best = d;
        arg = static_cast<std::size_t>(c);
      }
    }
    out[static_cast<std::size_t>(i)] = arg;
    inertia += best;
  }
  return inertia;
}

}  // namespace

KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed, std::size_t max_iterations) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (k == 0) throw ConfigError("k-means needs k >= 1");
  if (n < k) {
    throw ComputeError("k-means with k=" + std::to_string(k) + " needs at least k points, got " +
                       std::to_string(n));
  }
  Rng rng(derive_seed(seed, {0x6b6d}));
  KMeansResult r;
  r.centroids.resize(static_cast<Eigen::Index>(k), points.cols());
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t pick = static_cast<std::size_t>(rng.index(n));
  for (std::size_t c = 0; c < k; ++c) {
    r.centroids.row(static_cast<Eigen::Index>(c)) = points.row(static_cast<Eigen::Index>(pick));
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], (points.row(static_cast<Eigen::Index>(i)) -
                               r.centroids.row(static_cast<Eigen::Index>(c))).squaredNorm());
      total += d2[i];
    }
    if (c + 1 == k) break;
    if (total <= 0.0) {
      // Every point coincides with a chosen centroid; take the next unused index.
      pick = (pick + 1) % n;
      continue;
    }
    double u = rng.uniform() * total;
    pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      if (u < d2[i]) {
        pick = i;
        break;
      }
      u -= d2[i];
    }
  }

  r.assignments.assign(n, 0);
  r.inertia_history.push_back(assign(points, r.centroids, r.assignments));
  std::vector<std::size_t> next(n, 0);
  while (r.iterations < max_iterations) {
    Matrix sums = Matrix::Zero(static_cast<Eigen::Index>(k), points.cols());
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(static_cast<Eigen::Index>(r.assignments[i])) += points.row(static_cast<Eigen::Index>(i));
      ++counts[r.assignments[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        r.centroids.row(static_cast<Eigen::Index>(c)) =
            sums.row(static_cast<Eigen::Index>(c)) / static_cast<double>(counts[c]);
      }
    }
    ++r.iterations;
    const double inertia = assign(points, r.centroids, next);
    r.inertia_history.push_back(inertia);
    const bool stable = next == r.assignments;
    r.assignments.swap(next);
    if (stable) break;
  }
  return r;
}

double ClusterHeatmap::diagonal_dominance() const {
  double diag = 0.0;
  double off = 0.0;
  std::size_t nd = 0;
  std::size_t no = 0;
  for (Eigen::Index i = 0; i < mean.rows(); ++i) {
    for (Eigen::Index j = 0; j < mean.cols(); ++j) {
      if (std::isnan(mean(i, j))) continue;
      if (i == j) {
        diag += mean(i, j);
        ++nd;
      } else {
        off += mean(i, j);
        ++no;
      }
    }
  }
  if (nd == 0 || no == 0) return std::nan("");
  return diag / static_cast<double>(nd) - off / static_cast<double>(no);
}

ClusterHeatmap cluster_trak_heatmap(std::span<const std::string> assay_ids,
                                    std::span<const std::size_t> assignments, std::size_t k,
                                    const AssayTrakMatrix& trak) {
  if (assay_ids.size() != assignments.size()) {
    throw ComputeError("heatmap: one cluster assignment per assay required");
  }
  ClusterHeatmap h;
  h.k = k;
  h.assay_ids.assign(assay_ids.begin(), assay_ids.end());
  h.assignments.assign(assignments.begin(), assignments.end());
  const auto kk = static_cast<Eigen::Index>(k);
  Matrix sums = Matrix::Zero(kk, kk);
  h.pairs = Eigen::MatrixX<std::size_t>::Zero(kk, kk);
  std::vector<std::optional<std::size_t>> rows;
  std::vector<std::optional<std::size_t>> cols;
  for (const auto& id : assay_ids) {
    rows.push_back(trak.train_index(id));
    cols.push_back(trak.eval_index(id));
  }
  for (std::size_t a = 0; a < assay_ids.size(); ++a) {
    if (assignments[a] >= k) throw ComputeError("heatmap: cluster index out of range");
    if (!rows[a]) continue;
    for (std::size_t b = 0; b < assay_ids.size(); ++b) {
      if (a == b || !cols[b]) continue;
      const double v = trak.scores(static_cast<Eigen::Index>(*rows[a]), static_cast<Eigen::Index>(*cols[b]));
      if (std::isnan(v)) continue;
      const auto i = static_cast<Eigen::Index>(assignments[a]);
      const auto j = static_cast<Eigen::Index>(assignments[b]);
      sums(i, j) += v;
      ++h.pairs(i, j);
    }
  }
  h.mean = Matrix::Constant(kk, kk, std::nan(""));
  for (Eigen::Index i = 0; i < kk; ++i) {
    for (Eigen::Index j = 0; j < kk; ++j) {
      if (h.pairs(i, j) > 0) h.mean(i, j) = sums(i, j) / static_cast<double>(h.pairs(i, j));
    }
  }
  return h;
}

double weighted_selection_trak(std::span<const std::string> selection, std::string_view test_assay,
                               const AssayTrakMatrix& trak, const AssayCollection& collection) {
  if (selection.empty()) throw ComputeError("weighted selection TRAK of an empty selection");
  double num = 0.0;
  double den = 0.0;
  for (const auto& id : selection) {
    const auto w = static_cast<double>(collection.assay(id).measurements.size());
    num += w * trak.at(id, test_assay);
    den += w;
  }
  return num / den;
}

std::vector<ShiftPair> largest_shift_pairs(const RawEmbeddings& raw, const RawEmbeddings& finetuned,
                                           std::size_t top_n, bool normalize_raw) {
  std::vector<std::string> ids;
  for (const auto& [id, _] : raw) {
    if (!finetuned.contains(id)) {
      throw DataError(DataErrc::kMissingEmbedding, "assay " + id + " has no finetuned embedding");
    }
    ids.push_back(id);
  }
  std::vector<Vector> r;
  std::vector<const Vector*> f;
  for (const auto& id : ids) {
    const Vector& v = raw.find(id)->second;
    r.push_back(normalize_raw ? Vector(v / std::max(v.norm(), 1e-300)) : v);
    f.push_back(&finetuned.find(id)->second);
  }
  std::vector<ShiftPair> pairs;
  pairs.reserve(ids.size() * (ids.size() - 1) / 2);
  for (std::size_t a = 0; a < ids.size(); ++a) {
    for (std::size_t b = a + 1; b < ids.size(); ++b) {
      ShiftPair p{ids[a], ids[b], (r[a] - r[b]).norm(), (*f[a] - *f[b]).norm(), 0.0};
      p.shift = p.finetuned_distance - p.raw_distance;
      pairs.push_back(std::move(p));
    }
  }
  auto better = [](const ShiftPair& x, const ShiftPair& y) {
    if (x.shift != y.shift) return x.shift > y.shift;
    if (x.first != y.first) return x.first < y.first;
    return x.second < y.second;
  };
  top_n = std::min(top_n, pairs.size());
  std::partial_sort(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(top_n), pairs.end(), better);
  pairs.resize(top_n);
  return pairs;
}

std::string format_heatmap_csv(const ClusterHeatmap& heatmap) {
  std::string out = "cluster";
  for (std::size_t j = 0; j < heatmap.k; ++j) out += ",c" + std::to_string(j);
  out += '\n';
  for (std::size_t i = 0; i < heatmap.k; ++i) {
    std::vector<std::string> row{"c" + std::to_string(i)};
    for (std::size_t j = 0; j < heatmap.k; ++j) {
      const double v = heatmap.mean(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      row.push_back(std::isnan(v) ? "" : io::format_double(v));
    }
    io::append_csv_row(out, row);
  }
  return out;
}

std::string format_pca_csv(std::span<const std::string> ids, const PcaResult& pca,
                           std::span<const std::size_t> clusters) {
  std::string out = "assay_id,cluster";
  for (Eigen::Index c = 0; c < pca.coordinates.cols(); ++c) out += ",pc" + std::to_string(c + 1);
  out += '\n';
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::vector<std::string> row{ids[i], i < clusters.size() ? std::to_string(clusters[i]) : ""};
    for (Eigen::Index c = 0; c < pca.coordinates.cols(); ++c) {
      row.push_back(io::format_double(pca.coordinates(static_cast<Eigen::Index>(i), c)));
    }
    io::append_csv_row(out, row);
  }
  return out;
}

std::string format_shift_pairs_csv(std::span<const ShiftPair> pairs, const AssayCollection& collection) {
  std::string out = "assay_a,assay_b,raw_distance,finetuned_distance,shift,description_a,description_b\n";
  for (const auto& p : pairs) {
    const std::vector<std::string> row{p.first,
                                       p.second,
                                       io::format_double(p.raw_distance),
                                       io::format_double(p.finetuned_distance),
                                       io::format_double(p.shift),
                                       collection.assay(p.first).description,
                                       collection.assay(p.second).description};
    io::append_csv_row(out, row);
  }
  return out;
}

}  // namespace assaysel
