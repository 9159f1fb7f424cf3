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
#include "fedmask/model.h"

#include <charconv>
#include <cmath>
#include <random>
#include <sstream>

#include "fedmask/error.h"
#include "fedmask/rng.h"

namespace fedmask {
namespace {

const char* KindName(LayerKind kind) {
  switch (kind) {
    case LayerKind::kDense: return "dense";
    case LayerKind::kConv: return "conv";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kPool: return "pool";
    case LayerKind::kBatchNorm: return "bn";
    case LayerKind::kFlatten: return "flatten";
  }
  return "?";
}

std::size_t ParseCount(std::string_view token, std::string_view digits) {
  std::size_t value = 0;
  const auto* end = digits.data() + digits.size();
  auto [ptr, ec] = std::from_chars(digits.data(), end, value);
  if (ec != std::errc() || ptr != end || value == 0) {
    throw InvalidArgument("bad layer token '" + std::string(token) + "'");
  }
  return value;
}

LayerSpec ParseToken(std::string_view token) {
  if (token == "relu") return LayerSpec::Relu();
  if (token == "pool") return LayerSpec::Pool();
  if (token == "bn") return LayerSpec::BatchNorm();
  if (token == "flatten") return LayerSpec::Flatten();
  if (token.starts_with("dense")) {
    return LayerSpec::Dense(ParseCount(token, token.substr(5)));
  }
  if (token.starts_with("conv")) {
    std::string_view rest = token.substr(4);
    bool same = true;
    if (rest.ends_with('v')) {
      same = false;
      rest.remove_suffix(1);
    }
    std::size_t kernel = 3;
    if (auto k = rest.find('k'); k != std::string_view::npos) {
      kernel = ParseCount(token, rest.substr(k + 1));
      rest = rest.substr(0, k);
    }
    return LayerSpec::Conv(ParseCount(token, rest), kernel, same);
  }
  throw InvalidArgument("unknown layer token '" + std::string(token) + "'");
}

std::string Trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

ModelConfig DefaultCnnConfig(std::size_t channels, std::size_t height,
                             std::size_t width, std::size_t classes,
                             std::uint64_t seed) {
  ModelConfig cfg;
  cfg.channels = channels;
  cfg.height = height;
  cfg.width = width;
  cfg.classes = classes;
  cfg.seed = seed;
  cfg.layers = {LayerSpec::Conv(8), LayerSpec::BatchNorm(), LayerSpec::Relu(),
                LayerSpec::Pool(),  LayerSpec::Conv(16),    LayerSpec::BatchNorm(),
                LayerSpec::Relu(),  LayerSpec::Pool()};
  return cfg;
}

std::vector<LayerSpec> ParseLayers(std::string_view text) {
  std::vector<LayerSpec> layers;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto end = comma == std::string_view::npos ? text.size() : comma;
    const std::string token = Trim(text.substr(start, end - start));
    if (!token.empty()) {
      layers.push_back(ParseToken(token));
    } else if (comma != std::string_view::npos) {
      throw InvalidArgument("empty token in layer list '" + std::string(text) + "'");
    }
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return layers;
}

std::string FormatLayers(std::span<const LayerSpec> layers) {
  std::ostringstream os;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i) os << ',';
    const auto& l = layers[i];
    switch (l.kind) {
      case LayerKind::kDense: os << "dense" << l.units; break;
      case LayerKind::kConv:
        os << "conv" << l.units;
        if (l.kernel != 3) os << 'k' << l.kernel;
        if (!l.same_padding) os << 'v';
        break;
      default: os << KindName(l.kind);
    }
  }
  return os.str();
}

Model Model::Build(const ModelConfig& config) {
  if (config.classes < 2) throw InvalidArgument("model needs at least 2 classes");
  if (config.channels == 0 || config.height == 0 || config.width == 0) {
    throw InvalidArgument("model input shape must be non-empty");
  }
  Model m;
  m.config_ = config;
  Shape shape = {config.channels, config.height, config.width};
  std::size_t entry = 0;

  auto fail = [](std::size_t index, const LayerSpec& spec, const Shape& in,
                 const std::string& why) {
    throw InvalidArgument("layer " + std::to_string(index) + " (" +
                          KindName(spec.kind) + ") cannot accept input " +
                          ShapeToString(in) + ": " + why);
  };

  auto add_layer = [&](const LayerSpec& spec, std::string name, Shape out,
                       std::size_t entries) {
    m.layers_.push_back({spec, std::move(name), shape, out, entry});
    entry += entries;
    shape = std::move(out);
  };

  std::vector<LayerSpec> all = config.layers;
  all.push_back(LayerSpec::Dense(config.classes));
  for (std::size_t i = 0; i < all.size(); ++i) {
    const LayerSpec& spec = all[i];
    const bool head = i + 1 == all.size();
    const std::string name = head ? "head" : KindName(spec.kind) + std::to_string(i);
    switch (spec.kind) {
      case LayerKind::kConv: {
        if (shape.size() != 3) fail(i, spec, shape, "expects an image");
        if (spec.units == 0 || spec.kernel == 0) fail(i, spec, shape, "empty kernel");
        const std::size_t pad = spec.same_padding ? (spec.kernel - 1) / 2 : 0;
        if (spec.same_padding && spec.kernel % 2 == 0) {
          fail(i, spec, shape, "same padding needs an odd kernel");
        }
        if (shape[1] + 2 * pad < spec.kernel || shape[2] + 2 * pad < spec.kernel) {
          fail(i, spec, shape, "kernel larger than input");
        }
        add_layer(spec, name,
                  {spec.units, shape[1] + 2 * pad - spec.kernel + 1,
                   shape[2] + 2 * pad - spec.kernel + 1},
                  2);
        break;
      }
      case LayerKind::kPool:
        if (shape.size() != 3) fail(i, spec, shape, "expects an image");
        if (shape[1] < 2 || shape[2] < 2) fail(i, spec, shape, "input smaller than 2x2");
        add_layer(spec, name, {shape[0], shape[1] / 2, shape[2] / 2}, 0);
        break;
      case LayerKind::kBatchNorm:
        add_layer(spec, name, shape, 4);
        break;
      case LayerKind::kRelu:
        add_layer(spec, name, shape, 0);
        break;
      case LayerKind::kFlatten:
        add_layer(spec, name, {NumElements(shape)}, 0);
        break;
      case LayerKind::kDense: {
        if (spec.units == 0) fail(i, spec, shape, "zero units");
        if (shape.size() != 1) {
          // Implicit flatten before a dense layer.
          shape = {NumElements(shape)};
        }
        if (head) {
          m.head_weight_ = entry;
          m.head_bias_ = entry + 1;
        }
        add_layer(spec, name, {spec.units}, 2);
        break;
      }
    }
  }
  m.num_entries_ = entry;
  return m;
}

ParameterBundle Model::InitParameters() const {
  ParameterBundle bundle;
  Rng rng = MakeRng(DeriveSeed(config_.seed, {0x1417}));
  for (const auto& layer : layers_) {
    const LayerSpec& spec = layer.spec;
    switch (spec.kind) {
      case LayerKind::kConv: {
        const std::size_t in_c = layer.in_shape[0];
        const std::size_t fan_in = in_c * spec.kernel * spec.kernel;
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
        Tensor<double> w(Shape{spec.units, in_c, spec.kernel, spec.kernel});
        for (auto& v : w.data()) v = dist(rng);
        bundle.Add(layer.name + ".weight", std::move(w), spec.tag());
        bundle.Add(layer.name + ".bias", Tensor<double>(Shape{spec.units}),
                   spec.tag());
        break;
      }
      case LayerKind::kDense: {
        const std::size_t fan_in = layer.in_shape[0];
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
        Tensor<double> w(Shape{spec.units, fan_in});
        for (auto& v : w.data()) v = dist(rng);
        bundle.Add(layer.name + ".weight", std::move(w), spec.tag());
        bundle.Add(layer.name + ".bias", Tensor<double>(Shape{spec.units}),
                   spec.tag());
        break;
      }
      case LayerKind::kBatchNorm: {
        const std::size_t c = layer.in_shape[0];
        bundle.Add(layer.name + ".gamma", Tensor<double>(Shape{c}, 1.0), spec.tag());
        bundle.Add(layer.name + ".beta", Tensor<double>(Shape{c}), spec.tag());
        bundle.Add(layer.name + ".running_mean", Tensor<double>(Shape{c}),
                   spec.tag(), /*trainable=*/false);
        bundle.Add(layer.name + ".running_var", Tensor<double>(Shape{c}, 1.0),
                   spec.tag(), /*trainable=*/false);
        break;
      }
      default:
        break;
    }
  }
  return bundle;
}

template <typename T>
ad::Var<T> Model::Forward(ad::Tape<T>& tape, std::span<const ad::Var<T>> params,
                          const ad::Var<T>& input, BatchNormMode mode,
                          std::vector<BatchNormStats<T>>* stats) const {
  using ad::Var;
  if (params.size() != num_entries_) {
    throw ShapeError("forward: got " + std::to_string(params.size()) +
                     " parameter tensors, model has " + std::to_string(num_entries_));
  }
  const Shape& in = input.shape();
  const Shape expected = input_shape();
  if (in.size() != 4 || Shape(in.begin() + 1, in.end()) != expected || in[0] == 0) {
    throw ShapeError("forward: input " + ShapeToString(in) +
                     " does not match model input [N, " +
                     ShapeToString(expected).substr(1));
  }
  if (input.value().HasNan()) {
    throw NanError("forward: input contains NaN");
  }
  const std::size_t batch = in[0];

  Var<T> x = input;
  for (const auto& layer : layers_) {
    try {
      const LayerSpec& spec = layer.spec;
      const std::size_t e = layer.first_entry;
      auto param = [&](std::size_t k, const Shape& shape) -> const Var<T>& {
        const Var<T>& p = params[e + k];
        if (p.shape() != shape) {
          throw ShapeError("parameter " + std::to_string(e + k) + " has shape " +
                           ShapeToString(p.shape()) + ", expected " +
                           ShapeToString(shape));
        }
        if (p.value().HasNan()) {
          throw NanError("parameter " + std::to_string(e + k) +
                         " contains NaN; densify masked bundles before forward");
        }
        return p;
      };
      switch (spec.kind) {
        case LayerKind::kConv: {
          const Shape kshape = {spec.units, layer.in_shape[0], spec.kernel, spec.kernel};
          const std::size_t pad = spec.same_padding ? (spec.kernel - 1) / 2 : 0;
          x = ad::Conv2d(x, param(0, kshape), pad);
          x = x + ad::BroadcastChannel(param(1, {spec.units}), x.shape());
          break;
        }
        case LayerKind::kDense: {
          const std::size_t fan_in = layer.in_shape[0];
          if (x.shape().size() != 2) x = ad::Reshape(x, {batch, fan_in});
          x = ad::MatMul(x, ad::Transpose(param(0, {spec.units, fan_in})));
          x = x + ad::BroadcastChannel(param(1, {spec.units}), x.shape());
          break;
        }
        case LayerKind::kRelu:
          x = ad::Relu(x);
          break;
        case LayerKind::kPool:
          x = ad::AvgPool2(x);
          break;
        case LayerKind::kFlatten:
          x = ad::Reshape(x, {batch, layer.out_shape[0]});
          break;
        case LayerKind::kBatchNorm: {
          const std::size_t c = layer.in_shape[0];
          const Var<T>& gamma = param(0, {c});
          const Var<T>& beta = param(1, {c});
          const Var<T>& rmean = param(2, {c});
          const Var<T>& rvar = param(3, {c});
          const Shape xs = x.shape();
          if (mode == BatchNormMode::kRunningStatistics) {
            // y = x * (gamma / sd) + (beta - mean * gamma / sd)
            Tensor<T> inv_sd(Shape{c});
            for (std::size_t k = 0; k < c; ++k) {
              inv_sd[k] = T{1} / std::sqrt(rvar.value()[k] + T(kBatchNormEpsilon));
            }
            Var<T> a = gamma * tape.Constant(std::move(inv_sd));
            Var<T> b = beta - a * rmean;
            x = x * ad::BroadcastChannel(a, xs) + ad::BroadcastChannel(b, xs);
          } else {
            std::size_t count = batch;
            for (std::size_t k = 1; k < layer.in_shape.size(); ++k) {
              count *= layer.in_shape[k];
            }
            const T inv_count = T{1} / static_cast<T>(count);
            Var<T> mean = ad::Scale(ad::ChannelSum(x), inv_count);
            Var<T> centered = x - ad::BroadcastChannel(mean, xs);
            Var<T> var = ad::Scale(ad::ChannelSum(centered * centered), inv_count);
            Var<T> inv_sd = ad::Pow(
                var + tape.Constant(Tensor<T>(Shape{c}, T(kBatchNormEpsilon))), T(-0.5));
            x = centered * ad::BroadcastChannel(inv_sd * gamma, xs) +
                ad::BroadcastChannel(beta, xs);
            if (stats != nullptr) {
              stats->push_back({e + 2, e + 3, mean.value(), var.value(), count});
            }
          }
          break;
        }
      }
    } catch (const ShapeError& err) {
      throw ShapeError("layer '" + layer.name + "': " + err.what());
    } catch (const NanError& err) {
      throw NanError("layer '" + layer.name + "': " + err.what());
    }
  }
  return x;
}

std::pair<Model, ParameterBundle> BuildModel(const ModelConfig& config) {
  Model m = Model::Build(config);
  ParameterBundle p = m.InitParameters();
  return {std::move(m), std::move(p)};
}

template <typename T>
std::vector<ad::Var<T>> BindParameters(ad::Tape<T>& tape,
                                       const ParameterBundle& params) {
  std::vector<ad::Var<T>> vars;
  vars.reserve(params.size());
  for (const auto& e : params.entries()) {
    if (e.tensor.HasNan()) {
      throw NanError("parameter '" + e.name +
                     "' contains NaN; densify masked bundles before forward");
    }
    Tensor<T> value = e.tensor.template Cast<T>();
    vars.push_back(e.trainable ? tape.Leaf(std::move(value))
                               : tape.Constant(std::move(value)));
  }
  return vars;
}

template ad::Var<float> Model::Forward(ad::Tape<float>&,
                                       std::span<const ad::Var<float>>,
                                       const ad::Var<float>&, BatchNormMode,
                                       std::vector<BatchNormStats<float>>*) const;
template ad::Var<double> Model::Forward(ad::Tape<double>&,
                                        std::span<const ad::Var<double>>,
                                        const ad::Var<double>&, BatchNormMode,
                                        std::vector<BatchNormStats<double>>*) const;
template std::vector<ad::Var<float>> BindParameters(ad::Tape<float>&,
                                                    const ParameterBundle&);
template std::vector<ad::Var<double>> BindParameters(ad::Tape<double>&,
                                                     const ParameterBundle&);

}  // namespace fedmask
