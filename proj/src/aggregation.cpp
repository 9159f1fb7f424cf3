/*
 * Copyright 2026 The fedmask Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "fedmask/aggregation.h"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "fedmask/error.h"

namespace fedmask {
namespace {

void RequireAligned(std::span<const ParameterBundle> submissions) {
  if (submissions.empty()) throw InvalidArgument("aggregate: no submissions");
  for (std::size_t i = 1; i < submissions.size(); ++i) {
    submissions[0].RequireSameLayout(submissions[i],
                                      "submission " + std::to_string(i));
  }
}

}  // namespace

std::string_view AggregationName(AggregationKind kind) {
  return kind == AggregationKind::kMean ? "mean" : "median";
}

AggregationKind ParseAggregation(std::string_view name) {
  if (name == "mean") return AggregationKind::kMean;
  if (name == "median") return AggregationKind::kMedian;
  throw InvalidArgument("unknown aggregation '" + std::string(name) + "'");
}

ParameterBundle Aggregate(std::span<const ParameterBundle> submissions,
                          const ParameterBundle& fallback, const AggregationSpec& spec,
                          std::span<const double> weights) {
  RequireAligned(submissions);
  submissions[0].RequireSameLayout(fallback, "aggregation fallback");
  if (fallback.HasNan()) throw NanError("aggregate: fallback bundle contains NaN");
  const bool weighted = spec.kind == AggregationKind::kMean && spec.weighted;
  if (weighted) {
    if (weights.size() != submissions.size()) {
      throw InvalidArgument("aggregate: " + std::to_string(weights.size()) +
                            " weights for " + std::to_string(submissions.size()) +
                            " submissions");
    }
    for (double w : weights) {
      if (!(w > 0.0) || std::isinf(w)) {
        throw InvalidArgument("aggregate: weights must be positive and finite");
      }
    }
  }

  ParameterBundle out = fallback;
  std::vector<std::pair<double, double>> column;  // (value, weight)
  column.reserve(submissions.size());
  for (std::size_t e = 0; e < out.size(); ++e) {
    auto dst = out.entry(e).tensor.data();
    for (std::size_t j = 0; j < dst.size(); ++j) {
      column.clear();
      for (std::size_t c = 0; c < submissions.size(); ++c) {
        const double v = submissions[c].entry(e).tensor[j];
        if (!std::isnan(v)) column.emplace_back(v, weighted ? weights[c] : 1.0);
      }
      if (column.empty()) continue;  // keep fallback
      std::sort(column.begin(), column.end());
      const std::size_t n = column.size();
      if (spec.kind == AggregationKind::kMedian) {
        dst[j] = n % 2 == 1 ? column[n / 2].first
                            : (column[n / 2 - 1].first + column[n / 2].first) / 2.0;
      } else if (weighted) {
        double num = 0.0, den = 0.0;
        for (const auto& [v, w] : column) {
          num += w * v;
          den += w;
        }
        dst[j] = num / den;
      } else {
        double sum = 0.0;
        for (const auto& [v, w] : column) sum += v;
        dst[j] = sum / static_cast<double>(n);
      }
    }
  }
  return out;
}

std::vector<std::size_t> ContributorCounts(std::span<const ParameterBundle> submissions) {
  RequireAligned(submissions);
  std::vector<std::size_t> counts(submissions[0].total_count(), 0);
  for (const auto& s : submissions) {
    std::size_t k = 0;
    for (const auto& e : s.entries()) {
      for (double v : e.tensor.data()) counts[k++] += !std::isnan(v);
    }
  }
  return counts;
}

}  // namespace fedmask
