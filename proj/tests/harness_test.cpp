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

#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fedmask/image_io.h"
#include "fedmask/training.h"

namespace fedmask {
namespace {

namespace fs = std::filesystem;

fs::path Scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fedmask_harness_" + name);
  fs::remove_all(p);
  return p;
}

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

ExperimentConfig Parse(const std::string& text, std::vector<std::string> overrides = {}) {
  return ParseConfig(text, overrides);
}

constexpr const char* kSmallSynth =
    "[data]\n"
    "datasets = synth\n"
    "synth_shape = 1x12x12\n"
    "synth_classes = 4\n"
    "synth_train = 200\n"
    "synth_test = 40\n"
    "[model]\n"
    "layers = conv4,bn,relu,pool\n";

TEST(ConfigTest, ParsesSectionsAndLists) {
  const ExperimentConfig cfg = Parse(
      "; comment\n"
      "[experiment]\nkind = convergence\nseeds = 3, 4\njobs = 2\ntiming = false\n"
      "[grid]\nnone = 0\nmask = 0.2, 0.4\n"
      "[attack]\nlearning_rate = 0.01\nmax_iterations = 60\n"
      "[rounds]\nrounds = 3\nclients = 4\noptimizer = sgd\nprecision = f64\n"
      "[partition]\nkinds = iid, dirichlet\nbeta = 0.3\n"
      "[aggregation]\nkinds = median\n"
      "[sweep]\nmode = clamp\n");
  EXPECT_EQ(cfg.kind, ExperimentKind::kConvergence);
  EXPECT_EQ(cfg.seeds, (std::vector<std::uint64_t>{3, 4}));
  EXPECT_EQ(cfg.jobs, 2u);
  EXPECT_FALSE(cfg.timing);
  ASSERT_EQ(cfg.grid.size(), 3u);
  EXPECT_EQ(cfg.grid[2].method, ObfuscationMethod::kMask);
  EXPECT_DOUBLE_EQ(cfg.grid[2].p, 0.4);
  EXPECT_DOUBLE_EQ(cfg.attack.learning_rate, 0.01);
  EXPECT_EQ(cfg.attack.max_iterations, 60u);
  EXPECT_EQ(cfg.round.rounds, 3u);
  EXPECT_EQ(cfg.round.optimizer.kind, OptimizerKind::kSgd);
  EXPECT_EQ(cfg.round.precision, Precision::kFloat64);
  EXPECT_EQ(cfg.partitions.size(), 2u);
  EXPECT_DOUBLE_EQ(cfg.dirichlet_beta, 0.3);
  EXPECT_EQ(cfg.aggregations, (std::vector<AggregationKind>{AggregationKind::kMedian}));
  EXPECT_EQ(cfg.sweep.mode, BrightnessMode::kClamp);
  EXPECT_NO_THROW(cfg.Validate());
}

TEST(ConfigTest, OverridesApplyAfterTheFile) {
  const ExperimentConfig cfg =
      Parse("[grid]\nmask = 0.2\n[attack]\nlearning_rate = 0.01\n",
            {"attack.learning_rate=0.05", "grid.mask = 0.3,0.4", "data.synth_shape=3x32x32"});
  EXPECT_DOUBLE_EQ(cfg.attack.learning_rate, 0.05);
  ASSERT_EQ(cfg.grid.size(), 2u);
  EXPECT_DOUBLE_EQ(cfg.grid[0].p, 0.3);
  EXPECT_EQ(cfg.data.synth_shape, (Shape{3, 32, 32}));
  EXPECT_THROW(Parse("", {"attack"}), ConfigError);
  EXPECT_THROW(Parse("", {"nosection=1"}), ConfigError);
}

TEST(ConfigTest, ValidationErrors) {
  // Empty grid.
  EXPECT_THROW(Parse("[experiment]\nkind = threshold-sweep\n").Validate(), ConfigError);
  EXPECT_THROW(Parse("[grid]\nmask = 1.0\n").Validate(), ConfigError);
  EXPECT_THROW(Parse("[grid]\nclip = 1.5\n").Validate(), ConfigError);
  EXPECT_THROW(Parse("[grid]\nnoise = -1\n").Validate(), ConfigError);
  EXPECT_THROW(Parse("[grid]\nnone = 0\n[data]\ndatasets = lfw\n").Validate(), ConfigError);
  EXPECT_THROW(Parse("[grid]\nnone = 0\n[model]\nlayers = conv8,bogus\n").Validate(),
               ConfigError);
  EXPECT_THROW(Parse("[grid]\nnone = 0\n[attack]\nlearning_rate = 0\n").Validate(),
               ConfigError);
  EXPECT_THROW(Parse("[grid]\nnone = 0\n[rounds]\nclients = 0\n").Validate(), ConfigError);
  EXPECT_THROW(Parse("[grid]\nwhat = 0\n"), ConfigError);
  EXPECT_THROW(Parse("[attack]\nlr = 0.1\n"), ConfigError);
  EXPECT_THROW(Parse("[nosuch]\na = 1\n"), ConfigError);
  EXPECT_THROW(Parse("[attack]\nlearning_rate = fast\n"), ConfigError);
  EXPECT_THROW(Parse("[experiment]\nseeds = 1, x\n"), ConfigError);
  EXPECT_THROW(ParseSeedList(""), ConfigError);
  // Attack demo needs no grid.
  EXPECT_NO_THROW(Parse("[experiment]\nkind = attack-demo\n").Validate());
}

TEST(ConfigTest, HashTracksSettingsNotOutput) {
  const ExperimentConfig a = Parse("[grid]\nmask = 0.4\n");
  ExperimentConfig b = a;
  b.out = "elsewhere";
  b.jobs = 7;
  EXPECT_EQ(a.Hash(), b.Hash());
  EXPECT_EQ(a.Hash().size(), 16u);
  const ExperimentConfig c = Parse("[grid]\nmask = 0.3\n");
  EXPECT_NE(a.Hash(), c.Hash());
}

TEST(HarnessTest, ForEachCellCoversEveryIndexOnce) {
  for (std::size_t jobs : {1u, 3u, 16u}) {
    std::vector<std::atomic<int>> hits(50);
    ForEachCell(50, jobs, [&](std::size_t i) { hits[i]++; });
    for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
  }
  ForEachCell(0, 4, [](std::size_t) { FAIL(); });
}

TEST(HarnessTest, OutputDirValidation) {
  const fs::path dir = Scratch("outdir");
  EXPECT_NO_THROW(PrepareOutputDir(dir / "nested"));
  EXPECT_TRUE(fs::is_directory(dir / "nested"));
  std::ofstream(dir / "file") << "x";
  EXPECT_THROW(PrepareOutputDir(dir / "file"), ConfigError);
  fs::remove_all(dir);
}

TEST(HarnessTest, ThresholdCsvAndSummary) {
  std::vector<ThresholdRow> rows;
  auto row = [](std::string d, ObfuscationMethod m, double p, std::uint64_t s, double ssim,
                std::string status = "ok") {
    ThresholdRow r;
    r.dataset = d;
    r.cell = {m, p};
    r.seed = s;
    r.max_adjusted_ssim = ssim;
    r.status = status;
    r.wall_ms = 12.34;
    return r;
  };
  rows.push_back(row("mnist", ObfuscationMethod::kNone, 0, 0, 0.9));
  rows.push_back(row("mnist", ObfuscationMethod::kNone, 0, 1, 0.7));
  rows.push_back(row("mnist", ObfuscationMethod::kNone, 0, 2, 0.8));
  rows.push_back(row("mnist", ObfuscationMethod::kMask, 0.4, 0, 0.2));
  rows.push_back(row("mnist", ObfuscationMethod::kMask, 0.4, 1, 0.0, "error: boom"));
  rows.push_back(row("synth", ObfuscationMethod::kNone, 0, 0, 0.5));

  std::ostringstream csv;
  WriteThresholdCsv(csv, rows, "abc", /*timing=*/false);
  const std::string text = csv.str();
  EXPECT_EQ(text.substr(0, text.find('\n')),
            "dataset,method,p,seed,status,mse,max_adjusted_ssim,argmax_offset,"
            "attack_iterations,wall_ms,config_hash");
  EXPECT_NE(text.find("mnist,mask,0.4,1,error: boom,"), std::string::npos);
  EXPECT_EQ(text.find("12.3"), std::string::npos);
  std::ostringstream timed;
  WriteThresholdCsv(timed, rows, "abc", true);
  EXPECT_NE(timed.str().find(",12.3,abc"), std::string::npos);

  std::istringstream in(text);
  const std::string summary = ThresholdSummary(in);
  EXPECT_NE(summary.find("none 0   | 0.800  | 0.500"), std::string::npos) << summary;
  EXPECT_NE(summary.find("mask 0.4 | 0.200  | n/a"), std::string::npos) << summary;
}

TEST(HarnessTest, ConvergenceCsvAndSummary) {
  std::vector<ConvergenceRun> runs(3);
  runs[0].cell = {ObfuscationMethod::kNone, 0};
  runs[0].trace.rounds = {{1, 0.5, 1.2, 10}, {2, 0.75, 0.9, 10}};
  runs[1].cell = {ObfuscationMethod::kMask, 0.4};
  runs[1].aggregation = AggregationKind::kMedian;
  runs[1].trace.rounds = {{1, 0.4, 1.3, 10}, {2, 0.6, 1.0, 10}};
  runs[2].cell = {ObfuscationMethod::kPrune, 0.95};
  runs[2].status = "error: failed";
  std::ostringstream csv;
  WriteConvergenceCsv(csv, runs, "h", false);
  const std::string text = csv.str();
  EXPECT_EQ(text.substr(0, text.find('\n')),
            "method,p,aggregation,partition,round,accuracy,loss,wall_ms,seed,status,"
            "config_hash");
  EXPECT_NE(text.find("none,0,mean,iid,2,0.750000,0.900000,0.0,0,ok,h"), std::string::npos);
  EXPECT_NE(text.find("prune,0.95,mean,iid,0,"), std::string::npos);
  std::istringstream in(text);
  const std::string summary = FinalAccuracySummary(in);
  EXPECT_NE(summary.find("none 0     | 0.750    | n/a"), std::string::npos) << summary;
  EXPECT_NE(summary.find("mask 0.4   | n/a      | 0.600"), std::string::npos) << summary;
  EXPECT_NE(summary.find("prune 0.95 | n/a"), std::string::npos) << summary;
  EXPECT_NE(ConvergencePlotScript().find("convergence.csv"), std::string::npos);
}

TEST(HarnessTest, FailedCellIsRecordedNotThrown) {
  ExperimentConfig cfg = Parse(kSmallSynth, {"grid.none=0"});
  const DataSplit data = LoadData(cfg.data, "synth");
  // Labels beyond the model's class count make capture fail.
  Dataset bad = data.test;
  for (auto& l : bad.labels) l = 9;
  const ThresholdRow row = RunThresholdCell(cfg, "synth", bad, {ObfuscationMethod::kNone, 0}, 0);
  EXPECT_EQ(row.status.rfind("error: ", 0), 0u);
  EXPECT_EQ(row.status.find(','), std::string::npos);
}

TEST(HarnessTest, SweepRunsAndRerunsByteIdentically) {
  const fs::path dir = Scratch("sweep");
  ExperimentConfig cfg = Parse(kSmallSynth, {"grid.none=0", "grid.mask=0.4",
                                             "attack.max_iterations=90",
                                             "experiment.timing=false"});
  cfg.seeds = {0, 1};
  cfg.jobs = 2;
  cfg.out = dir / "a";
  const ExperimentOutcome a = RunThresholdSweep(cfg);
  EXPECT_EQ(a.cells, 4u);
  EXPECT_EQ(a.failed, 0u);
  cfg.out = dir / "b";
  cfg.jobs = 1;
  RunThresholdSweep(cfg);
  EXPECT_EQ(Slurp(dir / "a/threshold.csv"), Slurp(dir / "b/threshold.csv"));
  EXPECT_TRUE(fs::exists(dir / "a/threshold_summary.txt"));
  // Summary is recomputable from the CSV alone.
  std::ifstream csv(dir / "a/threshold.csv");
  EXPECT_EQ(ThresholdSummary(csv), Slurp(dir / "a/threshold_summary.txt"));
  fs::remove_all(dir);
}

TEST(HarnessTest, OneClientOneRoundMatchesDirectTraining) {
  ExperimentConfig cfg = Parse(kSmallSynth, {"grid.none=0", "rounds.rounds=1",
                                             "rounds.clients=1", "rounds.precision=f64"});
  const DataSplit data = LoadData(cfg.data, "synth");
  const ConvergenceRun run = RunConvergenceCell(cfg, data, {ObfuscationMethod::kNone, 0},
                                                AggregationKind::kMean, PartitionKind::kIid, 5);
  ASSERT_EQ(run.status, "ok");
  ASSERT_EQ(run.trace.rounds.size(), 1u);

  auto [model, params] = BuildModel(ExperimentModel(cfg, data.train, 5));
  std::vector<std::size_t> all(data.train.size());
  std::iota(all.begin(), all.end(), 0);
  const DataShard shard(data.train, all);
  TrainOptions opt;
  opt.epochs = cfg.round.epochs;
  opt.batch_size = cfg.round.batch_size;
  opt.optimizer = cfg.round.optimizer;
  opt.precision = cfg.round.precision;
  opt.seed = ClientTrainSeed(5, 1, 0);
  const ParameterBundle trained = TrainEpochs(model, params, shard, opt);
  const Evaluation direct = Evaluate(model, trained, data.test);
  EXPECT_DOUBLE_EQ(run.trace.rounds[0].accuracy, direct.accuracy);
  EXPECT_DOUBLE_EQ(run.trace.rounds[0].loss, direct.loss);
}

TEST(HarnessTest, ConvergenceRerunIsByteIdentical) {
  const fs::path dir = Scratch("conv");
  ExperimentConfig cfg = Parse(kSmallSynth, {"grid.none=0", "grid.mask=0.4", "rounds.rounds=2",
                                             "rounds.clients=3", "aggregation.kinds=mean,median",
                                             "experiment.timing=false"});
  cfg.seeds = {0};
  cfg.out = dir / "a";
  const ExperimentOutcome a = RunConvergence(cfg);
  EXPECT_EQ(a.cells, 4u);
  EXPECT_EQ(a.failed, 0u);
  cfg.out = dir / "b";
  cfg.jobs = 3;
  RunConvergence(cfg);
  EXPECT_EQ(Slurp(dir / "a/convergence.csv"), Slurp(dir / "b/convergence.csv"));
  EXPECT_TRUE(fs::exists(dir / "a/plot_convergence.py"));
  EXPECT_TRUE(fs::exists(dir / "a/final_accuracy.txt"));
  fs::remove_all(dir);
}

TEST(HarnessTest, AttackDemoWritesImagesAndReport) {
  const fs::path dir = Scratch("demo");
  ExperimentConfig cfg = Parse(std::string(kSmallSynth) + "[experiment]\nkind = attack-demo\n",
                               {"data.synth_shape=1x16x16", "attack.max_iterations=300"});
  cfg.seeds = {2};
  cfg.out = dir / "none";
  RunAttackDemo(cfg);
  for (const char* f : {"original.pgm", "reconstruction.pgm", "adjusted.pgm", "report.json"}) {
    EXPECT_TRUE(fs::exists(cfg.out / f)) << f;
  }
  const std::string report = Slurp(cfg.out / "report.json");
  EXPECT_NE(report.find("\"max_adjusted_ssim\""), std::string::npos);
  // The written original is the quantized test image.
  const Tensor<double> orig = ReadPixmap(cfg.out / "original.pgm");
  EXPECT_EQ(orig.shape(), (Shape{1, 16, 16}));

  // An unusable output directory fails before any work.
  std::ofstream(dir / "plainfile") << "x";
  cfg.out = dir / "plainfile";
  EXPECT_THROW(RunAttackDemo(cfg), ConfigError);
  fs::remove_all(dir);
}

TEST(ImageIoTest, PixmapRoundTrip) {
  const fs::path dir = Scratch("pnm");
  fs::create_directories(dir);
  Tensor<double> gray(Shape{1, 3, 4});
  for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = 20.0 * i;
  WritePixmap(dir / "g.pgm", gray);
  const Tensor<double> g = ReadPixmap(dir / "g.pgm");
  EXPECT_EQ(g.shape(), gray.shape());
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(g[i], gray[i]);

  Tensor<double> rgb(Shape{3, 2, 2});
  for (std::size_t i = 0; i < rgb.size(); ++i) rgb[i] = i * 21.0;
  WritePixmap(dir / "c.ppm", rgb);
  const Tensor<double> c = ReadPixmap(dir / "c.ppm");
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_EQ(c[i], rgb[i]);
  // Interleaved on disk: first pixel's R, G, B.
  const std::string bytes = Slurp(dir / "c.ppm");
  const std::string body = bytes.substr(bytes.size() - 12);
  EXPECT_EQ(static_cast<unsigned char>(body[0]), 0);
  EXPECT_EQ(static_cast<unsigned char>(body[1]), 84);
  EXPECT_EQ(static_cast<unsigned char>(body[2]), 168);

  // Model-space export clamps then scales.
  const Tensor<double> model_img(Shape{1, 1, 3}, std::vector<double>{-0.2, 0.5, 1.7});
  WriteModelImage(dir / "m.pgm", model_img);
  const Tensor<double> m = ReadPixmap(dir / "m.pgm");
  EXPECT_EQ(m[0], 0.0);
  EXPECT_EQ(m[1], 128.0);
  EXPECT_EQ(m[2], 255.0);
  EXPECT_THROW(WritePixmap(dir / "bad.pgm", Tensor<double>({2, 2, 2})), ShapeError);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace fedmask
