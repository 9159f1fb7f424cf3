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
#ifndef FEDMASK_AGGREGATION_H_
#define FEDMASK_AGGREGATION_H_

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "fedmask/parameter_bundle.h"

namespace fedmask {

enum class AggregationKind { kMean, kMedian };

std::string_view AggregationName(AggregationKind kind);
AggregationKind ParseAggregation(std::string_view name);

struct AggregationSpec {
  AggregationKind kind = AggregationKind::kMean;
  // Mean only: weight client i by weights[i] (e.g. shard size).
  bool weighted = false;
};

// Coordinate-wise combination over the non-NaN submissions. A coordinate
// with no surviving value takes the fallback (previous central) value, so
// the result is always dense. Values are combined in sorted order, which
// makes the output independent of submission order.
ParameterBundle Aggregate(std::span<const ParameterBundle> submissions,
                          const ParameterBundle& fallback, const AggregationSpec& spec,
                          std::span<const double> weights = {});

// Number of non-NaN submissions per flat coordinate.
std::vector<std::size_t> ContributorCounts(std::span<const ParameterBundle> submissions);

}  // namespace fedmask

#endif  // FEDMASK_AGGREGATION_H_
