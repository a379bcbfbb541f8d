#include "assaysel/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <nlohmann/json.hpp>

#include "assaysel/error.hpp"
#include "assaysel/io.hpp"

namespace assaysel {

using ordered_json = nlohmann::ordered_json;

std::string artifact_stamp(std::string_view manifest_hash) {
  return "# manifest_hash=" + std::string(manifest_hash) + "\n";
}

void check_artifact_stamp(std::string_view text, std::string_view manifest_hash,
                          const std::filesystem::path& source) {
  const auto stamp = artifact_stamp(manifest_hash);
  if (text.substr(0, stamp.size()) != stamp) {
    const auto eol = text.find('\n');
    throw DataError(DataErrc::kManifestMismatch,
                    source.string() + " was written by a different run (expected " + std::string(manifest_hash) +
                        ", found '" + std::string(text.substr(0, eol)) + "')");
  }
}

namespace {

constexpr const char* kCurveHeader =
    "target,strategy,split,run,architecture,split_seed,run_seed,fraction,auroc,train_measurements";

}  // namespace

std::string format_curve_csv(const LearningCurve& curve, std::string_view manifest_hash) {
  std::string out = artifact_stamp(manifest_hash);
  out += kCurveHeader;
  out += '\n';
  const auto& m = curve.meta;
  for (const auto& p : curve.points) {
    const std::vector<std::string> row{m.target_id,
                                       m.strategy,
                                       std::to_string(m.split),
                                       std::to_string(m.run),
                                       m.architecture,
                                       std::to_string(m.split_seed),
                                       std::to_string(m.run_seed),
                                       io::format_double(p.fraction),
                                       p.auroc ? io::format_double(*p.auroc) : "",
                                       io::format_double(p.train_measurements)};
    io::append_csv_row(out, row);
  }
  return out;
}

LearningCurve parse_curve_csv(std::string_view text, std::string_view manifest_hash,
                              const std::filesystem::path& source) {
  check_artifact_stamp(text, manifest_hash, source);
  const auto table = io::parse_csv(text);
  const auto name = source.string();
  const auto col = [&](const char* c) { return table.column(c, name); };
  const auto c_target = col("target"), c_strategy = col("strategy"), c_split = col("split"),
             c_run = col("run"), c_arch = col("architecture"), c_sseed = col("split_seed"),
             c_rseed = col("run_seed"), c_frac = col("fraction"), c_auroc = col("auroc"),
             c_size = col("train_measurements");
  LearningCurve curve;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& r = table.rows[i];
    const auto where = name + ":" + std::to_string(table.lines[i]);
    if (r.size() != table.header.size()) {
      throw DataError(DataErrc::kMalformedRow, where + ": expected " + std::to_string(table.header.size()) + " fields");
    }
    if (i == 0) {
      curve.meta = {r[c_target],
                    r[c_strategy],
                    static_cast<std::size_t>(io::parse_u64(r[c_split], where)),
                    static_cast<std::size_t>(io::parse_u64(r[c_run], where)),
                    r[c_arch],
                    io::parse_u64(r[c_sseed], where),
                    io::parse_u64(r[c_rseed], where)};
    }
    CurvePoint p;
    p.fraction = io::parse_double(r[c_frac], where);
    if (!r[c_auroc].empty()) p.auroc = io::parse_double(r[c_auroc], where);
    p.train_measurements = io::parse_double(r[c_size], where);
    curve.points.push_back(p);
  }
  if (curve.points.empty()) throw DataError(DataErrc::kMalformedRow, name + ": learning curve has no points");
  return curve;
}

namespace {

ordered_json number_or_null(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }

ordered_json optional_number(const std::optional<double>& v) {
  return v ? number_or_null(*v) : ordered_json(nullptr);
}

}  // namespace

std::string format_summary_json(const Summary& summary, const ReportMetadata& metadata) {
  ordered_json j;
  j["manifest_hash"] = metadata.manifest_hash;
  ordered_json meta;
  meta["aulc_definition"] =
      "trapezoidal area under the AUROC x 100 learning curve over the defined fraction points, "
      "divided by their fraction span";
  meta["auroc_pooling"] = metadata.pooling == "micro"
                              ? "micro: (label, score) pairs pooled across the sampled test assays per fraction"
                              : "macro: mean of per-test-assay AUROC per fraction";
  meta["pairing_unit"] = "(target, split, fraction); AUROC averaged over run seeds; cells undefined on either side dropped";
  meta["reference_strategy"] = summary.reference_strategy;
  meta["t_statistic_sign"] = "positive when the row's strategy beats the reference";
  meta["size_unit"] = metadata.size_unit;
  meta["architecture"] = metadata.architecture;
  meta["undefined_cells"] = "excluded from every average and counted per row";
  meta["fractions"] = summary.fractions;
  j["metadata"] = std::move(meta);

  ordered_json targets = ordered_json::array();
  for (const auto& [id, stats] : metadata.targets) {
    ordered_json t;
    t["target"] = id;
    t["assays"] = stats.assay_count;
    t["measurements"] = stats.measurement_count;
    t["active_fraction"] = stats.active_fraction;
    targets.push_back(std::move(t));
  }
  j["targets"] = std::move(targets);

  ordered_json rows = ordered_json::array();
  for (const auto& r : summary.rows) {
    ordered_json row;
    row["strategy"] = r.strategy;
    row["scope"] = r.target_id.empty() ? "overall" : "target";
    row["target"] = r.target_id.empty() ? ordered_json(nullptr) : ordered_json(r.target_id);
    row["aulc"] = number_or_null(r.aulc);
    row["curves"] = r.curves;
    row["undefined_cells"] = r.undefined_cells;
    ordered_json means = ordered_json::array();
    for (const auto& m : r.mean_auroc) means.push_back(optional_number(m));
    row["mean_auroc"] = std::move(means);
    if (r.versus_reference) {
      row["t"] = number_or_null(r.versus_reference->t);
      row["p"] = number_or_null(r.versus_reference->p);
      row["pairs"] = r.versus_reference->n;
    } else {
      row["t"] = nullptr;
      row["p"] = nullptr;
      row["pairs"] = 0;
    }
    rows.push_back(std::move(row));
  }
  j["aulc"] = std::move(rows);

  ordered_json bao = ordered_json::array();
  for (const auto& b : summary.bao) {
    ordered_json row;
    row["target"] = b.target_id;
    row["mean_selected_fraction"] = b.mean_selected_fraction;
    row["mean_auroc"] = optional_number(b.mean_auroc);
    row["runs"] = b.runs;
    row["undefined_cells"] = b.undefined_cells;
    bao.push_back(std::move(row));
  }
  j["bao_exact"] = std::move(bao);
  return j.dump(2) + "\n";
}

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

const char* strategy_color(std::string_view s) {
  if (s == "assaymatch") return "#d62728";
  if (s == "raw-embedding") return "#1f77b4";
  if (s == "random") return "#7f7f7f";
  if (s == "bao-exact") return "#2ca02c";
  return "#9467bd";
}

}  // namespace

std::string render_learning_curve_svg(std::string_view target_id, const Summary& summary,
                                      std::string_view manifest_hash) {
  constexpr double kW = 640, kH = 400, kLeft = 60, kRight = 150, kTop = 40, kBottom = 50;
  const double pw = kW - kLeft - kRight;
  const double ph = kH - kTop - kBottom;

  std::vector<const AulcResult*> rows;
  for (const auto& r : summary.rows) {
    if (r.target_id == target_id) rows.push_back(&r);
  }
  const BaoReference* bao = nullptr;
  for (const auto& b : summary.bao) {
    if (b.target_id == target_id) bao = &b;
  }

  double lo = 100.0, hi = 0.0;
  for (const auto* r : rows) {
    for (const auto& m : r->mean_auroc) {
      if (m) {
        lo = std::min(lo, *m);
        hi = std::max(hi, *m);
      }
    }
  }
  if (bao && bao->mean_auroc) {
    lo = std::min(lo, *bao->mean_auroc);
    hi = std::max(hi, *bao->mean_auroc);
  }
  if (lo > hi) {
    lo = 40.0;
    hi = 100.0;
  }
  lo = std::max(0.0, std::floor(lo / 5.0) * 5.0 - 5.0);
  hi = std::min(100.0, std::ceil(hi / 5.0) * 5.0 + 5.0);
  const double x0 = 0.1, x1 = 1.0;
  auto sx = [&](double f) { return kLeft + (f - x0) / (x1 - x0) * pw; };
  auto sy = [&](double a) { return kTop + (hi - a) / (hi - lo) * ph; };

  std::string out;
  out += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out += "<!-- manifest_hash=" + std::string(manifest_hash) + " -->\n";
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" viewBox=\"0 0 640 400\" "
         "font-family=\"sans-serif\" font-size=\"11\">\n";
  out += "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  out += "<text x=\"" + fixed(kLeft + pw / 2, 1) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" +
         xml_escape(target_id) + ": AUROC vs training fraction</text>\n";
  out += "<line x1=\"" + fixed(kLeft, 1) + "\" y1=\"" + fixed(kTop + ph, 1) + "\" x2=\"" + fixed(kLeft + pw, 1) +
         "\" y2=\"" + fixed(kTop + ph, 1) + "\" stroke=\"black\"/>\n";
  out += "<line x1=\"" + fixed(kLeft, 1) + "\" y1=\"" + fixed(kTop, 1) + "\" x2=\"" + fixed(kLeft, 1) + "\" y2=\"" +
         fixed(kTop + ph, 1) + "\" stroke=\"black\"/>\n";
  for (int step = 1; step <= 10; ++step) {
    const double x = sx(step / 10.0);
    out += "<line x1=\"" + fixed(x, 1) + "\" y1=\"" + fixed(kTop + ph, 1) + "\" x2=\"" + fixed(x, 1) + "\" y2=\"" +
           fixed(kTop + ph + 4, 1) + "\" stroke=\"black\"/>\n";
    out += "<text class=\"xtick\" x=\"" + fixed(x, 1) + "\" y=\"" + fixed(kTop + ph + 16, 1) +
           "\" text-anchor=\"middle\">" + std::to_string(step * 10) + "%</text>\n";
  }
  for (double a = lo; a <= hi + 1e-9; a += 5.0) {
    const double y = sy(a);
    out += "<line x1=\"" + fixed(kLeft - 4, 1) + "\" y1=\"" + fixed(y, 1) + "\" x2=\"" + fixed(kLeft, 1) + "\" y2=\"" +
           fixed(y, 1) + "\" stroke=\"black\"/>\n";
    out += "<text x=\"" + fixed(kLeft - 7, 1) + "\" y=\"" + fixed(y + 4, 1) + "\" text-anchor=\"end\">" +
           fixed(a, 0) + "</text>\n";
  }
  out += "<text x=\"" + fixed(kLeft + pw / 2, 1) + "\" y=\"" + fixed(kH - 10, 1) +
         "\" text-anchor=\"middle\">fraction of training data</text>\n";
  out += "<text x=\"16\" y=\"" + fixed(kTop + ph / 2, 1) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         fixed(kTop + ph / 2, 1) + ")\">micro AUROC x 100</text>\n";

  double legend_y = kTop + 10;
  auto legend = [&](std::string_view label, const char* color, bool dashed) {
    const double lx = kLeft + pw + 15;
    out += "<line x1=\"" + fixed(lx, 1) + "\" y1=\"" + fixed(legend_y, 1) + "\" x2=\"" + fixed(lx + 20, 1) +
           "\" y2=\"" + fixed(legend_y, 1) + "\" stroke=\"" + color + "\" stroke-width=\"2\"" +
           (dashed ? " stroke-dasharray=\"5,3\"" : "") + "/>\n";
    out += "<text x=\"" + fixed(lx + 25, 1) + "\" y=\"" + fixed(legend_y + 4, 1) + "\">" + xml_escape(label) +
           "</text>\n";
    legend_y += 18;
  };

  for (const auto* r : rows) {
    std::string pts;
    for (std::size_t i = 0; i < summary.fractions.size() && i < r->mean_auroc.size(); ++i) {
      if (!r->mean_auroc[i]) continue;
      if (!pts.empty()) pts += ' ';
      pts += fixed(sx(summary.fractions[i]), 2) + "," + fixed(sy(*r->mean_auroc[i]), 2);
    }
    const char* color = strategy_color(r->strategy);
    out += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"2\" points=\"" + pts +
           "\"/>\n";
    legend(r->strategy, color, false);
  }
  if (bao && bao->mean_auroc) {
    const double y = sy(*bao->mean_auroc);
    out += "<line x1=\"" + fixed(kLeft, 1) + "\" y1=\"" + fixed(y, 2) + "\" x2=\"" + fixed(kLeft + pw, 1) +
           "\" y2=\"" + fixed(y, 2) + "\" stroke=\"" + strategy_color("bao-exact") +
           "\" stroke-width=\"2\" stroke-dasharray=\"5,3\"/>\n";
    legend("bao-exact (" + fixed(100.0 * bao->mean_selected_fraction, 1) + "% of data)", strategy_color("bao-exact"),
           true);
  }
  out += "</svg>\n";
  return out;
}

}  // namespace assaysel
