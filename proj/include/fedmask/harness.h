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
#ifndef FEDMASK_HARNESS_H_
#define FEDMASK_HARNESS_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "fedmask/config.h"

namespace fedmask {

// Runs fn(0..n-1) on `jobs` worker threads. fn must not throw.
void ForEachCell(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

// Creates `dir` if needed and checks it is a writable directory. Throws
// ConfigError otherwise.
void PrepareOutputDir(const std::filesystem::path& dir);

// Index of the test image attacked for `seed`; shared by every method so
// cells with the same seed are paired.
std::size_t SweepImageIndex(std::uint64_t seed, std::size_t test_size);

struct ThresholdRow {
  std::string dataset;
  GridEntry cell;
  std::uint64_t seed = 0;
  std::string status = "ok";  // "ok" or "error: ..."
  double mse = 0.0;
  double max_adjusted_ssim = 0.0;
  int argmax_offset = 0;
  std::size_t attack_iterations = 0;
  double wall_ms = 0.0;
};

// One sweep cell: capture, obfuscate, attack, score. Never throws; failures
// land in status.
ThresholdRow RunThresholdCell(const ExperimentConfig& cfg, const std::string& dataset,
                              const Dataset& test, const GridEntry& cell, std::uint64_t seed);

// dataset,method,p,seed,status,mse,max_adjusted_ssim,argmax_offset,
// attack_iterations,wall_ms,config_hash
void WriteThresholdCsv(std::ostream& out, const std::vector<ThresholdRow>& rows,
                       const std::string& config_hash, bool timing);

// Median max_adjusted_ssim per (method, p) row and dataset column, computed
// from threshold CSV text alone.
std::string ThresholdSummary(std::istream& csv);

struct ConvergenceRun {
  GridEntry cell;
  AggregationKind aggregation = AggregationKind::kMean;
  PartitionKind partition = PartitionKind::kIid;
  std::uint64_t seed = 0;
  std::string status = "ok";
  TrainingTrace trace;
};

ConvergenceRun RunConvergenceCell(const ExperimentConfig& cfg, const DataSplit& data,
                                  const GridEntry& cell, AggregationKind aggregation,
                                  PartitionKind partition, std::uint64_t seed);

// method,p,aggregation,partition,round,accuracy,loss,wall_ms,seed,status,
// config_hash. A failed run contributes one row with round 0.
void WriteConvergenceCsv(std::ostream& out, const std::vector<ConvergenceRun>& runs,
                         const std::string& config_hash, bool timing);

// Final-round accuracy (median over seeds) per (method, p) row and
// aggregation/partition column, from convergence CSV text alone.
std::string FinalAccuracySummary(std::istream& csv);

// Matplotlib script that draws convergence.csv as a 2x2 grid of panels.
std::string ConvergencePlotScript();

struct ExperimentOutcome {
  std::size_t cells = 0;
  std::size_t failed = 0;
};

// Write into cfg.out: threshold.csv + threshold_summary.txt;
// convergence.csv + final_accuracy.txt + plot_convergence.py;
// original/reconstruction/adjusted pixmaps + report.json.
ExperimentOutcome RunThresholdSweep(const ExperimentConfig& cfg);
ExperimentOutcome RunConvergence(const ExperimentConfig& cfg);
ExperimentOutcome RunAttackDemo(const ExperimentConfig& cfg);

}  // namespace fedmask

#endif  // FEDMASK_HARNESS_H_
