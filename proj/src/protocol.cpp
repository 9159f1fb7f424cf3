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
#include "fedmask/protocol.h"

#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <iomanip>
#include <mutex>
#include <string>
#include <thread>

#include "fedmask/error.h"
#include "fedmask/rng.h"

namespace fedmask {
namespace {

constexpr std::uint64_t kClientTrainStream = 0xc11e;

// Runs fn(0..n-1) on up to `threads` workers; the first exception is
// rethrown after all workers stop.
void ParallelFor(std::size_t n, std::size_t threads,
                 const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

std::uint64_t ClientTrainSeed(std::uint64_t seed, std::size_t round, std::size_t client) {
  return DeriveSeed(seed, {kClientTrainStream, round, client});
}

void RoundConfig::Validate() const {
  if (rounds == 0) throw InvalidArgument("rounds must be >= 1");
  if (epochs == 0) throw InvalidArgument("epochs must be >= 1");
  if (clients == 0) throw InvalidArgument("clients must be >= 1");
  if (batch_size == 0) throw InvalidArgument("batch_size must be >= 1");
  obfuscation.Validate();
}

ParameterBundle RunRound(const Model& model, const ParameterBundle& central,
                         std::span<const DataShard> shards, const RoundConfig& cfg,
                         std::size_t round, RoundStats* stats) {
  if (shards.size() != cfg.clients) {
    throw InvalidArgument("run_round: " + std::to_string(shards.size()) +
                          " shards for " + std::to_string(cfg.clients) + " clients");
  }
  if (central.HasNan()) throw NanError("run_round: central bundle contains NaN");

  std::vector<ParameterBundle> submissions(cfg.clients);
  ParallelFor(cfg.clients, cfg.threads, [&](std::size_t client) {
    try {
      TrainOptions opt;
      opt.epochs = cfg.epochs;
      opt.batch_size = cfg.batch_size;
      opt.optimizer = cfg.optimizer;
      opt.precision = cfg.precision;
      opt.seed = ClientTrainSeed(cfg.seed, round, cfg.same_client_streams ? 0 : client);
      ParameterBundle trained = TrainEpochs(model, central, shards[client], opt);
      ObfuscationSpec obf = cfg.obfuscation;
      obf.key = {cfg.seed, round, client};
      submissions[client] = Obfuscate(trained, obf);
    } catch (const std::exception& e) {
      throw Error("client " + std::to_string(client) + ": " + e.what());
    }
  });

  std::vector<double> weights;
  for (const auto& s : shards) weights.push_back(static_cast<double>(s.size()));
  ParameterBundle next = Aggregate(submissions, central, cfg.aggregation, weights);
  if (stats != nullptr) {
    *stats = {};
    for (const auto& s : submissions) stats->masked_scalars += s.NanCount();
    for (auto c : ContributorCounts(submissions)) stats->fallback_coordinates += c == 0;
  }
  return next;
}

void WriteTraceCsv(std::ostream& out, const TrainingTrace& trace, bool timing) {
  out << "round,accuracy,loss,wall_ms\n";
  for (const auto& r : trace.rounds) {
    out << r.round << ',' << std::setprecision(6) << std::fixed << r.accuracy << ','
        << r.loss << ',' << std::setprecision(1) << (timing ? r.wall_ms : 0.0) << '\n';
    out << std::defaultfloat;
  }
}

TrainingTrace RunTraining(const Model& model, const ParameterBundle& initial,
                          const Dataset& train, const Dataset& test,
                          const RoundConfig& cfg, const PartitionSpec& partition,
                          ParameterBundle* final_central, const RoundCallback& on_round) {
  cfg.Validate();
  const auto parts = Partition(train.labels, train.num_classes, cfg.clients, partition);
  std::vector<DataShard> shards;
  for (const auto& p : parts) shards.emplace_back(train, p);

  TrainingTrace trace;
  ParameterBundle central = initial;
  for (std::size_t r = 1; r <= cfg.rounds; ++r) {
    const auto start = std::chrono::steady_clock::now();
    central = RunRound(model, central, shards, cfg, r);
    const Evaluation eval = Evaluate(model, central, test);
    const auto stop = std::chrono::steady_clock::now();
    RoundRecord rec{r, eval.accuracy, eval.loss,
                    std::chrono::duration<double, std::milli>(stop - start).count()};
    trace.rounds.push_back(rec);
    if (on_round) on_round(rec, central);
  }
  if (final_central != nullptr) *final_central = std::move(central);
  return trace;
}

}  // namespace fedmask
