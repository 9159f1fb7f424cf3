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
#include "fedmask/partition.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "fedmask/error.h"
#include "fedmask/rng.h"

namespace fedmask {
namespace {

using Shards = std::vector<std::vector<std::size_t>>;

std::vector<std::vector<std::size_t>> ByClass(std::span<const int> labels,
                                              std::size_t num_classes) {
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw InvalidArgument("partition: label " + std::to_string(labels[i]) +
                            " out of range");
    }
    by_class[labels[i]].push_back(i);
  }
  return by_class;
}

Shards Iid(const std::vector<std::vector<std::size_t>>& by_class, std::size_t clients,
           std::uint64_t seed) {
  Rng rng = MakeRng(DeriveSeed(seed, {0x11d}));
  Shards shards(clients);
  std::size_t next = 0;
  for (auto members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t i : members) {
      shards[next].push_back(i);
      next = (next + 1) % clients;
    }
  }
  return shards;
}

Shards DirichletDraw(const std::vector<std::vector<std::size_t>>& by_class,
                     std::size_t clients, double beta, Rng& rng) {
  Shards shards(clients);
  std::gamma_distribution<double> gamma(beta, 1.0);
  std::vector<double> w(clients);
  for (auto members : by_class) {
    if (members.empty()) continue;
    std::shuffle(members.begin(), members.end(), rng);
    double total = 0.0;
    for (auto& x : w) total += (x = gamma(rng));
    if (!(total > 0.0)) {
      // Every gamma variate underflowed; the limit puts the class on one client.
      std::fill(w.begin(), w.end(), 0.0);
      w[std::uniform_int_distribution<std::size_t>(0, clients - 1)(rng)] = 1.0;
      total = 1.0;
    }
    // Cut points at rounded cumulative proportions.
    const double n = static_cast<double>(members.size());
    double cumulative = 0.0;
    std::size_t start = 0;
    for (std::size_t c = 0; c < clients; ++c) {
      cumulative += w[c];
      const std::size_t end =
          c + 1 == clients
              ? members.size()
              : std::min(members.size(),
                         static_cast<std::size_t>(std::llround(cumulative / total * n)));
      for (std::size_t k = start; k < std::max(start, end); ++k) {
        shards[c].push_back(members[k]);
      }
      start = std::max(start, end);
    }
  }
  return shards;
}

}  // namespace

std::string_view PartitionName(PartitionKind kind) {
  return kind == PartitionKind::kIid ? "iid" : "dirichlet";
}

PartitionKind ParsePartition(std::string_view name) {
  if (name == "iid") return PartitionKind::kIid;
  if (name == "dirichlet") return PartitionKind::kDirichlet;
  throw InvalidArgument("unknown partition '" + std::string(name) + "'");
}

std::vector<std::vector<std::size_t>> Partition(std::span<const int> labels,
                                                std::size_t num_classes,
                                                std::size_t clients,
                                                const PartitionSpec& spec) {
  if (clients == 0) throw InvalidArgument("partition: need at least one client");
  if (spec.min_shard == 0) throw InvalidArgument("partition: min_shard must be >= 1");
  if (labels.size() < clients * spec.min_shard) {
    throw InvalidArgument("partition: " + std::to_string(labels.size()) +
                          " samples cannot give " + std::to_string(clients) +
                          " clients at least " + std::to_string(spec.min_shard) +
                          " each");
  }
  const auto by_class = ByClass(labels, num_classes);
  Shards shards;
  if (spec.kind == PartitionKind::kIid) {
    shards = Iid(by_class, clients, spec.seed);
  } else {
    if (!(spec.beta > 0.0) || std::isinf(spec.beta)) {
      throw InvalidArgument("partition: dirichlet beta must be > 0");
    }
    bool ok = false;
    for (std::size_t attempt = 0; attempt < spec.max_attempts && !ok; ++attempt) {
      Rng rng = MakeRng(DeriveSeed(spec.seed, {0xd1c, attempt}));
      shards = DirichletDraw(by_class, clients, spec.beta, rng);
      ok = std::all_of(shards.begin(), shards.end(),
                       [&](const auto& s) { return s.size() >= spec.min_shard; });
    }
    if (!ok) {
      throw Error("partition: no dirichlet draw met min_shard=" +
                  std::to_string(spec.min_shard) + " after " +
                  std::to_string(spec.max_attempts) + " attempts");
    }
  }
  for (auto& s : shards) std::sort(s.begin(), s.end());
  return shards;
}

}  // namespace fedmask
