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
#ifndef FEDMASK_PARTITION_H_
#define FEDMASK_PARTITION_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace fedmask {

enum class PartitionKind { kIid, kDirichlet };

std::string_view PartitionName(PartitionKind kind);
PartitionKind ParsePartition(std::string_view name);

struct PartitionSpec {
  PartitionKind kind = PartitionKind::kIid;
  double beta = 0.5;          // Dirichlet concentration
  std::size_t min_shard = 1;  // smallest acceptable client shard
  std::uint64_t seed = 0;
  std::size_t max_attempts = 100;  // Dirichlet redraws before giving up
};

// Splits sample indices 0..labels.size()-1 into `clients` disjoint shards
// covering every index, each sorted ascending.
//
// iid: stratified. Each class is shuffled and dealt round-robin, continuing
// where the previous class stopped, so sizes differ by at most one and
// every shard sees the global class mix.
// dirichlet: for each class, client proportions ~ Dir(beta, ..., beta);
// a draw with a shard below min_shard is redrawn.
std::vector<std::vector<std::size_t>> Partition(std::span<const int> labels,
                                                std::size_t num_classes,
                                                std::size_t clients,
                                                const PartitionSpec& spec);

}  // namespace fedmask

#endif  // FEDMASK_PARTITION_H_
