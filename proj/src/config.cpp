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
#include "fedmask/config.h"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "fedmask/rng.h"

namespace fedmask {
namespace {

namespace pt = boost::property_tree;

std::string Trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> SplitList(std::string_view s, char sep = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto end = s.find(sep, start);
    const std::string item =
        Trim(s.substr(start, end == std::string_view::npos ? s.size() - start : end - start));
    if (!item.empty()) out.push_back(item);
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return out;
}

double ToDouble(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  const auto r = std::from_chars(v.data(), end, out);
  if (r.ec != std::errc() || r.ptr != end) {
    throw ConfigError(key + ": '" + v + "' is not a number");
  }
  return out;
}

std::uint64_t ToUnsigned(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto r = std::from_chars(v.data(), end, out);
  if (r.ec != std::errc() || r.ptr != end) {
    throw ConfigError(key + ": '" + v + "' is not a non-negative integer");
  }
  return out;
}

bool ToBool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": '" + v + "' is not a boolean");
}

Shape ToShape(const std::string& key, const std::string& v) {
  Shape s;
  for (const auto& part : SplitList(v, 'x')) s.push_back(ToUnsigned(key, part));
  if (s.size() != 3) throw ConfigError(key + ": expected CxHxW, got '" + v + "'");
  return s;
}

// Enum parsers throw InvalidArgument; report them as config errors.
template <typename F>
auto Named(const std::string& key, const std::string& v, F parse) {
  try {
    return parse(v);
  } catch (const InvalidArgument& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

std::string Num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T, typename F>
std::string JoinNames(const std::vector<T>& items, F name) {
  std::string out;
  for (const auto& it : items) {
    if (!out.empty()) out += ",";
    out += std::string(name(it));
  }
  return out;
}

void Apply(ExperimentConfig& cfg, const std::string& section, const std::string& key,
           const std::string& value) {
  const std::string full = section + "." + key;
  const std::string& v = value;
  if (section == "experiment") {
    if (key == "kind") cfg.kind = Named(full, v, ParseExperiment);
    else if (key == "seeds") cfg.seeds = ParseSeedList(v);
    else if (key == "jobs") cfg.jobs = ToUnsigned(full, v);
    else if (key == "timing") cfg.timing = ToBool(full, v);
    else if (key == "mask_exemption") cfg.mask_exemption = ToBool(full, v);
    else throw ConfigError("unknown key " + full);
  } else if (section == "data") {
    if (key == "datasets") cfg.data.datasets = SplitList(v);
    else if (key == "root") cfg.data.root = v;
    else if (key == "synth_shape") cfg.data.synth_shape = ToShape(full, v);
    else if (key == "synth_classes") cfg.data.synth_classes = ToUnsigned(full, v);
    else if (key == "synth_train") cfg.data.synth_train = ToUnsigned(full, v);
    else if (key == "synth_test") cfg.data.synth_test = ToUnsigned(full, v);
    else if (key == "synth_seed") cfg.data.synth_seed = ToUnsigned(full, v);
    else throw ConfigError("unknown key " + full);
  } else if (section == "model") {
    if (key == "layers") cfg.layers = v;
    else throw ConfigError("unknown key " + full);
  } else if (section == "grid") {
    const ObfuscationMethod m = Named(full, key, ParseMethod);
    std::erase_if(cfg.grid, [m](const GridEntry& g) { return g.method == m; });
    for (const auto& p : SplitList(v)) cfg.grid.push_back({m, ToDouble(full, p)});
  } else if (section == "attack") {
    auto& a = cfg.attack;
    if (key == "learning_rate") a.learning_rate = ToDouble(full, v);
    else if (key == "weight_decay") a.weight_decay = ToDouble(full, v);
    else if (key == "checkpoint_interval") a.checkpoint_interval = ToUnsigned(full, v);
    else if (key == "max_iterations") a.max_iterations = ToUnsigned(full, v);
    else if (key == "tolerance") a.tolerance = ToDouble(full, v);
    else throw ConfigError("unknown key " + full);
  } else if (section == "sweep") {
    if (key == "mode") {
      if (v == "wrap") cfg.sweep.mode = BrightnessMode::kWrap;
      else if (v == "clamp") cfg.sweep.mode = BrightnessMode::kClamp;
      else throw ConfigError(full + ": expected wrap or clamp");
    } else if (key == "max_offset") cfg.sweep.max_offset = static_cast<int>(ToUnsigned(full, v));
    else if (key == "step") cfg.sweep.step = static_cast<int>(ToUnsigned(full, v));
    else throw ConfigError("unknown key " + full);
  } else if (section == "rounds") {
    auto& r = cfg.round;
    if (key == "rounds") r.rounds = ToUnsigned(full, v);
    else if (key == "epochs") r.epochs = ToUnsigned(full, v);
    else if (key == "clients") r.clients = ToUnsigned(full, v);
    else if (key == "batch_size") r.batch_size = ToUnsigned(full, v);
    else if (key == "learning_rate") r.optimizer.learning_rate = ToDouble(full, v);
    else if (key == "optimizer") {
      if (v == "adam") r.optimizer.kind = OptimizerKind::kAdam;
      else if (v == "sgd") r.optimizer.kind = OptimizerKind::kSgd;
      else throw ConfigError(full + ": expected adam or sgd");
    } else if (key == "precision") {
      if (v == "f32") r.precision = Precision::kFloat32;
      else if (v == "f64") r.precision = Precision::kFloat64;
      else throw ConfigError(full + ": expected f32 or f64");
    } else if (key == "threads") r.threads = ToUnsigned(full, v);
    else throw ConfigError("unknown key " + full);
  } else if (section == "partition") {
    if (key == "kinds") {
      cfg.partitions.clear();
      for (const auto& k : SplitList(v)) cfg.partitions.push_back(Named(full, k, ParsePartition));
    } else if (key == "beta") cfg.dirichlet_beta = ToDouble(full, v);
    else if (key == "min_shard") cfg.min_shard = ToUnsigned(full, v);
    else throw ConfigError("unknown key " + full);
  } else if (section == "aggregation") {
    if (key == "kinds") {
      cfg.aggregations.clear();
      for (const auto& k : SplitList(v)) {
        cfg.aggregations.push_back(Named(full, k, ParseAggregation));
      }
    } else throw ConfigError("unknown key " + full);
  } else if (section == "demo") {
    if (key == "method") cfg.demo.method = Named(full, v, ParseMethod);
    else if (key == "p") cfg.demo.p = ToDouble(full, v);
    else throw ConfigError("unknown key " + full);
  } else {
    throw ConfigError("unknown section [" + section + "]");
  }
}

}  // namespace

std::string_view ExperimentName(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::kThresholdSweep: return "threshold-sweep";
    case ExperimentKind::kConvergence: return "convergence";
    case ExperimentKind::kAttackDemo: return "attack-demo";
  }
  return "?";
}

ExperimentKind ParseExperiment(std::string_view name) {
  if (name == "threshold-sweep") return ExperimentKind::kThresholdSweep;
  if (name == "convergence") return ExperimentKind::kConvergence;
  if (name == "attack-demo") return ExperimentKind::kAttackDemo;
  throw InvalidArgument("unknown experiment '" + std::string(name) + "'");
}

std::vector<std::uint64_t> ParseSeedList(std::string_view text) {
  std::vector<std::uint64_t> out;
  for (const auto& s : SplitList(text)) out.push_back(ToUnsigned("seeds", s));
  if (out.empty()) throw ConfigError("seeds: empty list");
  return out;
}

void ExperimentConfig::Validate() const {
  if (seeds.empty()) throw ConfigError("no seeds");
  if (jobs == 0) throw ConfigError("experiment.jobs must be >= 1");
  if (data.datasets.empty()) throw ConfigError("data.datasets is empty");
  for (const auto& d : data.datasets) {
    if (d != "mnist" && d != "synth" && d != "cifar10") {
      throw ConfigError("data.datasets: unknown dataset '" + d + "'");
    }
  }
  if (data.synth_shape.size() != 3 || data.synth_shape[0] == 0 || data.synth_shape[1] == 0 ||
      data.synth_shape[2] == 0) {
    throw ConfigError("data.synth_shape must be CxHxW with positive sizes");
  }
  if (data.synth_classes < 2) throw ConfigError("data.synth_classes must be >= 2");
  if (data.synth_train < data.synth_classes || data.synth_test < data.synth_classes) {
    throw ConfigError("data.synth_train/test must be >= synth_classes");
  }
  if (layers != "default") {
    try {
      ParseLayers(layers);
    } catch (const Error& e) {
      throw ConfigError(std::string("model.layers: ") + e.what());
    }
  }
  if (kind != ExperimentKind::kAttackDemo && grid.empty()) {
    throw ConfigError("[grid] is empty");
  }
  auto check_obf = [](const GridEntry& g, const std::string& where) {
    try {
      ObfuscationSpec{g.method, g.p, {}}.Validate();
    } catch (const Error& e) {
      throw ConfigError(where + ": " + e.what());
    }
  };
  for (const auto& g : grid) check_obf(g, "grid." + std::string(MethodName(g.method)));
  check_obf(demo, "demo");
  try {
    attack.Validate();
    RoundConfig r = round;
    r.Validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (sweep.step <= 0) throw ConfigError("sweep.step must be >= 1");
  if (partitions.empty()) throw ConfigError("partition.kinds is empty");
  if (!(dirichlet_beta > 0.0)) throw ConfigError("partition.beta must be > 0");
  if (aggregations.empty()) throw ConfigError("aggregation.kinds is empty");
}

std::string ExperimentConfig::Canonical() const {
  std::ostringstream o;
  o << "experiment.kind=" << ExperimentName(kind) << "\n";
  o << "experiment.seeds=" << JoinNames(seeds, [](auto s) { return std::to_string(s); }) << "\n";
  o << "experiment.timing=" << timing << "\n";
  o << "experiment.mask_exemption=" << mask_exemption << "\n";
  o << "data.datasets=" << JoinNames(data.datasets, [](const auto& s) { return s; }) << "\n";
  o << "data.synth_shape=" << ShapeToString(data.synth_shape) << "\n";
  o << "data.synth_classes=" << data.synth_classes << "\n";
  o << "data.synth_train=" << data.synth_train << "\n";
  o << "data.synth_test=" << data.synth_test << "\n";
  o << "data.synth_seed=" << data.synth_seed << "\n";
  o << "model.layers=" << layers << "\n";
  for (const auto& g : grid) o << "grid." << MethodName(g.method) << "=" << Num(g.p) << "\n";
  o << "attack.learning_rate=" << Num(attack.learning_rate) << "\n";
  o << "attack.weight_decay=" << Num(attack.weight_decay) << "\n";
  o << "attack.checkpoint_interval=" << attack.checkpoint_interval << "\n";
  o << "attack.max_iterations=" << attack.max_iterations << "\n";
  o << "attack.tolerance=" << Num(attack.tolerance) << "\n";
  o << "sweep.mode=" << (sweep.mode == BrightnessMode::kWrap ? "wrap" : "clamp") << "\n";
  o << "sweep.max_offset=" << sweep.max_offset << "\n";
  o << "sweep.step=" << sweep.step << "\n";
  o << "rounds.rounds=" << round.rounds << "\n";
  o << "rounds.epochs=" << round.epochs << "\n";
  o << "rounds.clients=" << round.clients << "\n";
  o << "rounds.batch_size=" << round.batch_size << "\n";
  o << "rounds.optimizer=" << (round.optimizer.kind == OptimizerKind::kAdam ? "adam" : "sgd")
    << "\n";
  o << "rounds.learning_rate=" << Num(round.optimizer.learning_rate) << "\n";
  o << "rounds.precision=" << (round.precision == Precision::kFloat32 ? "f32" : "f64") << "\n";
  o << "partition.kinds=" << JoinNames(partitions, PartitionName) << "\n";
  o << "partition.beta=" << Num(dirichlet_beta) << "\n";
  o << "partition.min_shard=" << min_shard << "\n";
  o << "aggregation.kinds=" << JoinNames(aggregations, AggregationName) << "\n";
  o << "demo.method=" << MethodName(demo.method) << "\n";
  o << "demo.p=" << Num(demo.p) << "\n";
  return o.str();
}

std::string ExperimentConfig::Hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : Canonical()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ExperimentConfig ParseConfig(std::string_view text, const std::vector<std::string>& overrides) {
  pt::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  ExperimentConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError("config: key '" + section + "' outside any section");
    }
    for (const auto& [key, node] : body) Apply(cfg, section, key, Trim(node.data()));
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    const auto dot = o.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
      throw ConfigError("override '" + o + "': expected section.key=value");
    }
    Apply(cfg, Trim(o.substr(0, dot)), Trim(o.substr(dot + 1, eq - dot - 1)),
          Trim(o.substr(eq + 1)));
  }
  return cfg;
}

ExperimentConfig LoadConfig(const std::filesystem::path& path,
                            const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return ParseConfig(buf.str(), overrides);
}

ModelConfig ExperimentModel(const ExperimentConfig& cfg, const Dataset& data,
                            std::uint64_t seed) {
  if (cfg.layers == "default") {
    return DefaultCnnConfig(data.channels(), data.height(), data.width(), data.num_classes,
                            seed);
  }
  ModelConfig m;
  m.channels = data.channels();
  m.height = data.height();
  m.width = data.width();
  m.classes = data.num_classes;
  m.layers = ParseLayers(cfg.layers);
  m.seed = seed;
  return m;
}

DataSplit LoadData(const DataSpec& spec, const std::string& name) {
  std::filesystem::path root = spec.root;
  if (const char* env = std::getenv("FEDMASK_DATA_ROOT"); env != nullptr && *env != '\0') {
    root = env;
  }
  if (name == "mnist") {
    const auto dir = root / "mnist";
    return {LoadMnist(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte"),
            LoadMnist(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte")};
  }
  if (name == "cifar10") {
    const auto dir = root / "cifar-10-batches-bin";
    std::vector<std::filesystem::path> train;
    for (int i = 1; i <= 5; ++i) train.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
    const std::filesystem::path test[] = {dir / "test_batch.bin"};
    return {LoadCifar10(train), LoadCifar10(test)};
  }
  if (name == "synth") {
    return {SynthDataset(spec.synth_train, spec.synth_classes, spec.synth_shape, spec.synth_seed),
            SynthDataset(spec.synth_test, spec.synth_classes, spec.synth_shape,
                         DeriveSeed(spec.synth_seed, {0x7e57}))};
  }
  throw ConfigError("unknown dataset '" + name + "'");
}

}  // namespace fedmask
