#pragma once

// Terse constructors for hand-built collections.

#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

#include "assaysel/core_data.hpp"

namespace testing_support {

using assaysel::Vector;

inline Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

// `n` measurements; molecule j has features (j, -j) and alternates active /
// inactive, starting active.
inline assaysel::AssayRecord assay(const std::string& id, std::size_t n, const std::string& description = "",
                                   std::optional<std::string> bao = std::nullopt,
                                   const std::string& target = "T1") {
  assaysel::AssayRecord a;
  a.assay_id = id;
  a.target_id = target;
  a.description = description.empty() ? "protocol " + id : description;
  a.bao_label = std::move(bao);
  for (std::size_t j = 0; j < n; ++j) {
    const double x = static_cast<double>(j);
    a.measurements.push_back(assaysel::make_measurement(id + "_m" + std::to_string(j), vec({x, -x}),
                                                        j % 2 == 0 ? 10.0 : 10000.0));
  }
  return a;
}

inline assaysel::EmbeddingMap embeddings(const std::vector<std::pair<std::string, Vector>>& rows) {
  assaysel::EmbeddingMap out;
  for (const auto& [id, v] : rows) out.emplace(id, assaysel::EmbeddingRecord{id, v, std::nullopt});
  return out;
}

}  // namespace testing_support
