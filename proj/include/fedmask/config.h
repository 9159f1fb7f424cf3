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
#ifndef FEDMASK_CONFIG_H_
#define FEDMASK_CONFIG_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedmask/aggregation.h"
#include "fedmask/attack.h"
#include "fedmask/dataset.h"
#include "fedmask/metrics.h"
#include "fedmask/obfuscation.h"
#include "fedmask/partition.h"
#include "fedmask/protocol.h"

namespace fedmask {

// Experiment files are INI: [section] headers, key = value lines, ';' or
// '#' comments. Lists are comma-separated. Recognized keys:
//
//   [experiment] kind (threshold-sweep | convergence | attack-demo),
//                seeds, jobs, timing, mask_exemption
//   [data]       datasets (mnist | synth | cifar10), root, synth_shape
//                (CxHxW), synth_classes, synth_train, synth_test, synth_seed
//   [model]      layers (see ParseLayers; "default" = the small CNN)
//   [grid]       <method> = p list, e.g. mask = 0.2, 0.3, 0.4
//   [attack]     learning_rate, weight_decay, checkpoint_interval,
//                max_iterations, tolerance
//   [sweep]      mode (wrap | clamp), max_offset, step
//   [rounds]     rounds, epochs, clients, batch_size, optimizer (adam | sgd),
//                learning_rate, precision (f32 | f64), threads
//   [partition]  kinds (iid, dirichlet), beta, min_shard
//   [aggregation] kinds (mean, median)
//   [demo]       method, p
//
// Unknown sections or keys are errors.

struct DataSpec {
  std::vector<std::string> datasets = {"mnist"};
  // Relative roots resolve against FEDMASK_DATA_ROOT when set.
  std::filesystem::path root = "data";
  Shape synth_shape = {1, 28, 28};
  std::size_t synth_classes = 10;
  std::size_t synth_train = 2000;
  std::size_t synth_test = 1000;
  std::uint64_t synth_seed = 1;
};

struct GridEntry {
  ObfuscationMethod method = ObfuscationMethod::kNone;
  double p = 0.0;
};

enum class ExperimentKind { kThresholdSweep, kConvergence, kAttackDemo };

std::string_view ExperimentName(ExperimentKind kind);
ExperimentKind ParseExperiment(std::string_view name);

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::kThresholdSweep;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::size_t jobs = 1;
  // false writes wall_ms = 0 so reruns are byte-identical.
  bool timing = true;
  // Test hook: false masks BatchNorm entries too.
  bool mask_exemption = true;

  DataSpec data;
  std::string layers = "default";
  std::vector<GridEntry> grid;
  AttackConfig attack;
  SweepConfig sweep;
  RoundConfig round;
  std::vector<PartitionKind> partitions = {PartitionKind::kIid};
  double dirichlet_beta = 0.5;
  std::size_t min_shard = 1;
  std::vector<AggregationKind> aggregations = {AggregationKind::kMean};
  GridEntry demo{ObfuscationMethod::kNone, 0.0};

  std::filesystem::path out = "out";

  // Throws ConfigError.
  void Validate() const;
  // Canonical key = value text of every setting except out and jobs.
  std::string Canonical() const;
  // FNV-1a 64 of Canonical(), as 16 hex digits.
  std::string Hash() const;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Parses INI text, then applies "section.key=value" overrides in order.
ExperimentConfig ParseConfig(std::string_view text,
                             const std::vector<std::string>& overrides = {});
ExperimentConfig LoadConfig(const std::filesystem::path& path,
                            const std::vector<std::string>& overrides = {});

// "0,1,2" -> {0, 1, 2}.
std::vector<std::uint64_t> ParseSeedList(std::string_view text);

// Model for the dataset's image shape and class count.
ModelConfig ExperimentModel(const ExperimentConfig& cfg, const Dataset& data,
                            std::uint64_t seed);

struct DataSplit {
  Dataset train;
  Dataset test;
};

// Loads (or synthesizes) one named dataset.
DataSplit LoadData(const DataSpec& spec, const std::string& name);

}  // namespace fedmask

#endif  // FEDMASK_CONFIG_H_
