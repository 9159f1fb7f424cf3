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
#ifndef FEDMASK_PROTOCOL_H_
#define FEDMASK_PROTOCOL_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <vector>

#include "fedmask/aggregation.h"
#include "fedmask/dataset.h"
#include "fedmask/model.h"
#include "fedmask/obfuscation.h"
#include "fedmask/parameter_bundle.h"
#include "fedmask/partition.h"
#include "fedmask/training.h"

namespace fedmask {

struct RoundConfig {
  std::size_t rounds = 25;
  std::size_t epochs = 1;
  std::size_t clients = 10;
  std::size_t batch_size = 8;
  OptimizerSpec optimizer;
  Precision precision = Precision::kFloat32;
  // method and p; the stream key is filled per (seed, round, client).
  ObfuscationSpec obfuscation;
  AggregationSpec aggregation;
  std::uint64_t seed = 0;
  // Clients trained concurrently within a round. Results do not depend on it.
  std::size_t threads = 1;
  // Test hook: every client draws client 0's training stream.
  bool same_client_streams = false;

  void Validate() const;
};

// Seed of client `client`'s local training in round `round`.
std::uint64_t ClientTrainSeed(std::uint64_t seed, std::size_t round, std::size_t client);

struct RoundStats {
  std::size_t masked_scalars = 0;        // NaN values across all submissions
  std::size_t fallback_coordinates = 0;  // coordinates no client supplied
};

// One round of obfuscated federated learning: every client starts from
// `central`, trains `epochs` epochs on its shard, obfuscates its parameters
// and submits them; the server aggregates. `round` is 1-based and only
// keys the random streams.
ParameterBundle RunRound(const Model& model, const ParameterBundle& central,
                         std::span<const DataShard> shards, const RoundConfig& cfg,
                         std::size_t round, RoundStats* stats = nullptr);

struct RoundRecord {
  std::size_t round = 0;
  double accuracy = 0.0;
  double loss = 0.0;
  double wall_ms = 0.0;
};

struct TrainingTrace {
  std::vector<RoundRecord> rounds;
};

// CSV with header round,accuracy,loss,wall_ms. Without timing, wall_ms is
// written as 0 so reruns are byte-identical.
void WriteTraceCsv(std::ostream& out, const TrainingTrace& trace, bool timing);

// Called after each round with the record and the new central bundle.
using RoundCallback = std::function<void(const RoundRecord&, const ParameterBundle&)>;

// Partitions `train`, runs cfg.rounds rounds from `initial` and evaluates
// the central model on `test` after every round.
TrainingTrace RunTraining(const Model& model, const ParameterBundle& initial,
                          const Dataset& train, const Dataset& test,
                          const RoundConfig& cfg, const PartitionSpec& partition,
                          ParameterBundle* final_central = nullptr,
                          const RoundCallback& on_round = nullptr);

}  // namespace fedmask

#endif  // FEDMASK_PROTOCOL_H_
