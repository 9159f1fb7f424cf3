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
#include "fedmask/harness.h"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <thread>
#include <tuple>

#include "json.hpp"

#include "fedmask/attack.h"
#include "fedmask/image_io.h"
#include "fedmask/metrics.h"
#include "fedmask/rng.h"

namespace fedmask {
namespace {

using Clock = std::chrono::steady_clock;

double MsSince(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::string Fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string PText(double p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", p);
  return buf;
}

// Status text must stay inside one CSV field.
std::string ErrorStatus(const std::string& what) {
  std::string s = "error: " + what;
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), '"', '\'');
  return s;
}

std::vector<std::string> SplitCsvLine(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double Median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Rows keep first-seen order; columns too.
struct Table {
  std::vector<std::string> rows, cols;
  std::map<std::pair<std::string, std::string>, std::vector<double>> cells;

  void Add(const std::string& row, const std::string& col, std::optional<double> v) {
    if (std::find(rows.begin(), rows.end(), row) == rows.end()) rows.push_back(row);
    if (std::find(cols.begin(), cols.end(), col) == cols.end()) cols.push_back(col);
    auto& c = cells[{row, col}];
    if (v) c.push_back(*v);
  }

  std::string Format(const std::string& corner) const {
    std::size_t w0 = corner.size();
    for (const auto& r : rows) w0 = std::max(w0, r.size());
    std::vector<std::size_t> w;
    for (const auto& c : cols) w.push_back(std::max<std::size_t>(c.size(), 6));
    std::ostringstream o;
    auto pad = [](const std::string& s, std::size_t n) {
      return s + std::string(n > s.size() ? n - s.size() : 0, ' ');
    };
    o << pad(corner, w0);
    for (std::size_t j = 0; j < cols.size(); ++j) o << " | " << pad(cols[j], w[j]);
    o << "\n" << std::string(w0, '-');
    for (std::size_t j = 0; j < cols.size(); ++j) o << "-+-" << std::string(w[j], '-');
    o << "\n";
    for (const auto& r : rows) {
      o << pad(r, w0);
      for (std::size_t j = 0; j < cols.size(); ++j) {
        const auto it = cells.find({r, cols[j]});
        const std::string v = it == cells.end() || it->second.empty()
                                  ? "n/a"
                                  : Fixed(Median(it->second), 3);
        o << " | " << pad(v, w[j]);
      }
      o << "\n";
    }
    return o.str();
  }
};

void WriteFile(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

std::string ImageExt(const Dataset& d) { return d.channels() == 1 ? ".pgm" : ".ppm"; }

}  // namespace

void ForEachCell(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

void PrepareOutputDir(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (fs::exists(dir, ec) && !fs::is_directory(dir, ec)) {
    throw ConfigError("output path " + dir.string() + " is not a directory");
  }
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory " + dir.string() + ": " + ec.message());
  const fs::path probe = dir / ".fedmask_write_probe";
  {
    std::ofstream f(probe);
    if (!f) throw ConfigError("output directory " + dir.string() + " is not writable");
  }
  fs::remove(probe, ec);
}

std::size_t SweepImageIndex(std::uint64_t seed, std::size_t test_size) {
  Rng rng = MakeRng(DeriveSeed(seed, {0x1a6e}));
  return std::uniform_int_distribution<std::size_t>(0, test_size - 1)(rng);
}

ThresholdRow RunThresholdCell(const ExperimentConfig& cfg, const std::string& dataset,
                              const Dataset& test, const GridEntry& cell, std::uint64_t seed) {
  ThresholdRow row;
  row.dataset = dataset;
  row.cell = cell;
  row.seed = seed;
  const auto t0 = Clock::now();
  try {
    const std::size_t idx = SweepImageIndex(seed, test.size());
    const Tensor<double> image = test.Image(idx).Reshaped(test.image_shape());
    auto [model, params] = BuildModel(ExperimentModel(cfg, test, seed));
    const ObfuscationSpec obf{cell.method, cell.p, {seed, 0, 0}, cfg.mask_exemption};
    const GradientCapture cap = CaptureGradient(model, params, image, test.labels[idx], obf);
    AttackConfig attack = cfg.attack;
    attack.seed = seed;
    const AttackResult r = RunAttack(model, cap, attack);
    const LeakageReport rep = EvaluateLeakage(r.reconstruction, image, cfg.sweep);
    row.mse = rep.mse;
    row.max_adjusted_ssim = rep.max_adjusted_ssim;
    row.argmax_offset = rep.argmax_offset;
    row.attack_iterations = r.iterations;
  } catch (const std::exception& e) {
    row.status = ErrorStatus(e.what());
  }
  row.wall_ms = MsSince(t0);
  return row;
}

void WriteThresholdCsv(std::ostream& out, const std::vector<ThresholdRow>& rows,
                       const std::string& config_hash, bool timing) {
  out << "dataset,method,p,seed,status,mse,max_adjusted_ssim,argmax_offset,"
         "attack_iterations,wall_ms,config_hash\n";
  for (const auto& r : rows) {
    out << r.dataset << "," << MethodName(r.cell.method) << "," << PText(r.cell.p) << ","
        << r.seed << "," << r.status << "," << Fixed(r.mse, 8) << ","
        << Fixed(r.max_adjusted_ssim, 6) << "," << r.argmax_offset << ","
        << r.attack_iterations << "," << (timing ? Fixed(r.wall_ms, 1) : "0.0") << ","
        << config_hash << "\n";
  }
}

std::string ThresholdSummary(std::istream& csv) {
  std::string line;
  std::getline(csv, line);
  Table t;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    const auto f = SplitCsvLine(line);
    if (f.size() < 7) throw DataError("threshold csv: short row '" + line + "'");
    std::optional<double> v;
    if (f[4] == "ok") v = std::stod(f[6]);
    t.Add(f[1] + " " + f[2], f[0], v);
  }
  return "median max_adjusted_ssim\n" + t.Format("method p");
}

ConvergenceRun RunConvergenceCell(const ExperimentConfig& cfg, const DataSplit& data,
                                  const GridEntry& cell, AggregationKind aggregation,
                                  PartitionKind partition, std::uint64_t seed) {
  ConvergenceRun run;
  run.cell = cell;
  run.aggregation = aggregation;
  run.partition = partition;
  run.seed = seed;
  try {
    RoundConfig rc = cfg.round;
    rc.obfuscation = {cell.method, cell.p, {}, cfg.mask_exemption};
    rc.aggregation = {aggregation, false};
    rc.seed = seed;
    PartitionSpec ps;
    ps.kind = partition;
    ps.beta = cfg.dirichlet_beta;
    ps.min_shard = cfg.min_shard;
    ps.seed = seed;
    auto [model, params] = BuildModel(ExperimentModel(cfg, data.train, seed));
    run.trace = RunTraining(model, params, data.train, data.test, rc, ps);
  } catch (const std::exception& e) {
    run.status = ErrorStatus(e.what());
    run.trace.rounds.clear();
  }
  return run;
}

void WriteConvergenceCsv(std::ostream& out, const std::vector<ConvergenceRun>& runs,
                         const std::string& config_hash, bool timing) {
  out << "method,p,aggregation,partition,round,accuracy,loss,wall_ms,seed,status,"
         "config_hash\n";
  for (const auto& r : runs) {
    const std::string head = std::string(MethodName(r.cell.method)) + "," + PText(r.cell.p) +
                             "," + std::string(AggregationName(r.aggregation)) + "," +
                             std::string(PartitionName(r.partition)) + ",";
    const std::string tail =
        "," + std::to_string(r.seed) + "," + r.status + "," + config_hash + "\n";
    if (r.status != "ok") {
      out << head << "0,0.000000,0.000000,0.0" << tail;
      continue;
    }
    for (const auto& rec : r.trace.rounds) {
      out << head << rec.round << "," << Fixed(rec.accuracy, 6) << "," << Fixed(rec.loss, 6)
          << "," << (timing ? Fixed(rec.wall_ms, 1) : "0.0") << tail;
    }
  }
}

std::string FinalAccuracySummary(std::istream& csv) {
  std::string line;
  std::getline(csv, line);
  // (row, col, seed) -> (round, accuracy) of the latest round seen.
  std::map<std::tuple<std::string, std::string, std::string>, std::pair<long, double>> last;
  std::vector<std::tuple<std::string, std::string, std::string>> order;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    const auto f = SplitCsvLine(line);
    if (f.size() < 10) throw DataError("convergence csv: short row '" + line + "'");
    const auto key = std::make_tuple(f[0] + " " + f[1], f[2] + "/" + f[3], f[8]);
    const auto [it, inserted] = last.try_emplace(key, -1L, 0.0);
    if (inserted) order.push_back(key);
    if (f[9] != "ok") continue;
    const long round = std::stol(f[4]);
    if (round > it->second.first) it->second = {round, std::stod(f[5])};
  }
  Table t;
  for (const auto& key : order) {
    const auto& [round, acc] = last[key];
    t.Add(std::get<0>(key), std::get<1>(key), round > 0 ? std::optional<double>(acc) : std::nullopt);
  }
  return "final-round test accuracy (median over seeds)\n" + t.Format("method p");
}

std::string ConvergencePlotScript() {
  return R"PY(# Generated by fedmask. Usage: python3 plot_convergence.py [convergence.csv]
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd

path = sys.argv[1] if len(sys.argv) > 1 else "convergence.csv"
df = pd.read_csv(path)
df = df[df["status"] == "ok"]
aggs = sorted(df["aggregation"].unique())
parts = sorted(df["partition"].unique())
fig, axes = plt.subplots(len(parts), len(aggs), figsize=(5 * len(aggs), 3.5 * len(parts)),
                         squeeze=False, sharey=True)
for i, part in enumerate(parts):
    for j, agg in enumerate(aggs):
        ax = axes[i][j]
        sub = df[(df["partition"] == part) & (df["aggregation"] == agg)]
        for (method, p), g in sub.groupby(["method", "p"], sort=False):
            curve = g.groupby("round")["accuracy"].median()
            label = method if method == "none" else f"{method} {p:g}"
            ax.plot(curve.index, curve.values, label=label)
        ax.set_title(f"{agg} / {part}")
        ax.set_xlabel("round")
        ax.set_ylabel("test accuracy")
        ax.grid(alpha=0.3)
axes[0][0].legend()
fig.tight_layout()
fig.savefig("convergence.png", dpi=120)
)PY";
}

ExperimentOutcome RunThresholdSweep(const ExperimentConfig& cfg) {
  cfg.Validate();
  PrepareOutputDir(cfg.out);
  std::map<std::string, DataSplit> data;
  for (const auto& name : cfg.data.datasets) data.emplace(name, LoadData(cfg.data, name));

  struct Cell {
    std::string dataset;
    GridEntry entry;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (const auto& d : cfg.data.datasets) {
    for (const auto& g : cfg.grid) {
      for (auto s : cfg.seeds) cells.push_back({d, g, s});
    }
  }
  std::vector<ThresholdRow> rows(cells.size());
  ForEachCell(cells.size(), cfg.jobs, [&](std::size_t i) {
    const Cell& c = cells[i];
    rows[i] = RunThresholdCell(cfg, c.dataset, data.at(c.dataset).test, c.entry, c.seed);
  });

  std::ostringstream csv;
  WriteThresholdCsv(csv, rows, cfg.Hash(), cfg.timing);
  WriteFile(cfg.out / "threshold.csv", csv.str());
  std::istringstream in(csv.str());
  WriteFile(cfg.out / "threshold_summary.txt", ThresholdSummary(in));
  WriteFile(cfg.out / "config.resolved", cfg.Canonical());

  ExperimentOutcome outcome{rows.size(), 0};
  for (const auto& r : rows) outcome.failed += r.status != "ok";
  return outcome;
}

ExperimentOutcome RunConvergence(const ExperimentConfig& cfg) {
  cfg.Validate();
  PrepareOutputDir(cfg.out);
  const DataSplit data = LoadData(cfg.data, cfg.data.datasets.front());

  struct Cell {
    GridEntry entry;
    AggregationKind agg;
    PartitionKind part;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (const auto& g : cfg.grid) {
    for (auto a : cfg.aggregations) {
      for (auto p : cfg.partitions) {
        for (auto s : cfg.seeds) cells.push_back({g, a, p, s});
      }
    }
  }
  std::vector<ConvergenceRun> runs(cells.size());
  ForEachCell(cells.size(), cfg.jobs, [&](std::size_t i) {
    const Cell& c = cells[i];
    runs[i] = RunConvergenceCell(cfg, data, c.entry, c.agg, c.part, c.seed);
  });

  std::ostringstream csv;
  WriteConvergenceCsv(csv, runs, cfg.Hash(), cfg.timing);
  WriteFile(cfg.out / "convergence.csv", csv.str());
  std::istringstream in(csv.str());
  WriteFile(cfg.out / "final_accuracy.txt", FinalAccuracySummary(in));
  WriteFile(cfg.out / "plot_convergence.py", ConvergencePlotScript());
  WriteFile(cfg.out / "config.resolved", cfg.Canonical());

  ExperimentOutcome outcome{runs.size(), 0};
  for (const auto& r : runs) outcome.failed += r.status != "ok";
  return outcome;
}

ExperimentOutcome RunAttackDemo(const ExperimentConfig& cfg) {
  cfg.Validate();
  PrepareOutputDir(cfg.out);
  const std::string name = cfg.data.datasets.front();
  const Dataset test = LoadData(cfg.data, name).test;
  const std::uint64_t seed = cfg.seeds.front();

  const std::size_t idx = SweepImageIndex(seed, test.size());
  const Tensor<double> image = test.Image(idx).Reshaped(test.image_shape());
  auto [model, params] = BuildModel(ExperimentModel(cfg, test, seed));
  const ObfuscationSpec obf{cfg.demo.method, cfg.demo.p, {seed, 0, 0}, cfg.mask_exemption};
  const GradientCapture cap = CaptureGradient(model, params, image, test.labels[idx], obf);
  AttackConfig attack = cfg.attack;
  attack.seed = seed;
  const AttackResult r = RunAttack(model, cap, attack);
  const LeakageReport rep = EvaluateLeakage(r.reconstruction, image, cfg.sweep);

  const std::string ext = ImageExt(test);
  WriteModelImage(cfg.out / ("original" + ext), image);
  WriteModelImage(cfg.out / ("reconstruction" + ext), r.reconstruction);
  WritePixmap(cfg.out / ("adjusted" + ext),
              ShiftBrightness(Quantize(r.reconstruction), rep.argmax_offset, cfg.sweep.mode));

  nlohmann::ordered_json j;
  j["dataset"] = name;
  j["image_index"] = idx;
  j["true_label"] = test.labels[idx];
  j["method"] = std::string(MethodName(cfg.demo.method));
  j["p"] = cfg.demo.p;
  j["seed"] = seed;
  j["label"] = r.label;
  j["label_inferred"] = r.label_inferred;
  j["attack_iterations"] = r.iterations;
  j["stop"] = std::string(StopReasonName(r.stop));
  j["best_loss"] = r.best_loss;
  j["checkpoint_losses"] = r.checkpoint_losses;
  j["mse"] = rep.mse;
  j["raw_ssim"] = rep.ssim_by_offset.front();
  j["ssim_by_offset"] = rep.ssim_by_offset;
  j["max_adjusted_ssim"] = rep.max_adjusted_ssim;
  j["argmax_offset"] = rep.argmax_offset;
  j["config_hash"] = cfg.Hash();
  WriteFile(cfg.out / "report.json", j.dump(2) + "\n");
  return {1, 0};
}

}  // namespace fedmask
