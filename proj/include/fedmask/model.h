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
#ifndef FEDMASK_MODEL_H_
#define FEDMASK_MODEL_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedmask/autodiff.h"
#include "fedmask/parameter_bundle.h"

namespace fedmask {

enum class LayerKind { kDense, kConv, kRelu, kPool, kBatchNorm, kFlatten };

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  // Output units (dense) or output channels (conv).
  std::size_t units = 0;
  std::size_t kernel = 3;
  bool same_padding = true;

  static LayerSpec Dense(std::size_t units) {
    return {LayerKind::kDense, units, 0, false};
  }
  static LayerSpec Conv(std::size_t channels, std::size_t kernel = 3,
                        bool same_padding = true) {
    return {LayerKind::kConv, channels, kernel, same_padding};
  }
  static LayerSpec Relu() { return {LayerKind::kRelu}; }
  static LayerSpec Pool() { return {LayerKind::kPool}; }
  static LayerSpec BatchNorm() { return {LayerKind::kBatchNorm}; }
  static LayerSpec Flatten() { return {LayerKind::kFlatten}; }

  // BatchNorm layers are always mask-exempt.
  ParamTag tag() const {
    return kind == LayerKind::kBatchNorm ? ParamTag::kMaskExempt
                                         : ParamTag::kMaskable;
  }
};

// Hidden layers only: the classifier head (flatten + dense to `classes`) is
// appended by Model::Build.
struct ModelConfig {
  std::size_t channels = 1;
  std::size_t height = 28;
  std::size_t width = 28;
  std::size_t classes = 10;
  std::vector<LayerSpec> layers;
  std::uint64_t seed = 0;
};

// conv(8,3x3)+BN+ReLU+pool, conv(16,3x3)+BN+ReLU+pool, dense head.
ModelConfig DefaultCnnConfig(std::size_t channels, std::size_t height,
                             std::size_t width, std::size_t classes,
                             std::uint64_t seed);

// Comma-separated layer list, e.g. "conv8,bn,relu,pool,dense64,relu".
// Tokens: conv<C>[k<K>][v] (v = valid padding), dense<U>, bn, relu, pool,
// flatten. Empty string means no hidden layers.
std::vector<LayerSpec> ParseLayers(std::string_view text);
std::string FormatLayers(std::span<const LayerSpec> layers);

enum class BatchNormMode {
  // Normalize with the current batch (training).
  kBatchStatistics,
  // Normalize with the stored running statistics (evaluation, attack).
  kRunningStatistics,
};

// Batch statistics seen by one BatchNorm layer during a training forward.
template <typename T>
struct BatchNormStats {
  std::size_t mean_entry = 0;  // bundle index of running_mean
  std::size_t var_entry = 0;   // bundle index of running_var
  Tensor<T> mean;
  Tensor<T> variance;  // biased
  std::size_t count = 0;
};

inline constexpr double kBatchNormEpsilon = 1e-5;

// Static network definition. Holds no parameter values; Forward takes them
// as tape variables aligned with the bundle layout from InitParameters.
class Model {
 public:
  // Throws InvalidArgument naming the first layer whose input shape it
  // cannot accept.
  static Model Build(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  // [C, H, W]
  Shape input_shape() const {
    return {config_.channels, config_.height, config_.width};
  }
  std::size_t num_classes() const { return config_.classes; }

  // He-style fan-in scaling for weights, zero biases, identity BatchNorm.
  ParameterBundle InitParameters() const;

  std::size_t head_weight_entry() const { return head_weight_; }
  std::size_t head_bias_entry() const { return head_bias_; }
  std::size_t num_entries() const { return num_entries_; }

  // Logits [N, classes] for input [N, C, H, W]. `params` follows the bundle
  // order. In kBatchStatistics mode the per-layer statistics are appended to
  // `stats` when it is non-null.
  template <typename T>
  ad::Var<T> Forward(ad::Tape<T>& tape, std::span<const ad::Var<T>> params,
                     const ad::Var<T>& input, BatchNormMode mode,
                     std::vector<BatchNormStats<T>>* stats = nullptr) const;

 private:
  struct Layer {
    LayerSpec spec;
    std::string name;
    Shape in_shape;   // per-sample
    Shape out_shape;  // per-sample
    std::size_t first_entry = 0;
  };

  ModelConfig config_;
  std::vector<Layer> layers_;  // including the head
  std::size_t head_weight_ = 0;
  std::size_t head_bias_ = 0;
  std::size_t num_entries_ = 0;
};

// Convenience: the model and its freshly initialized parameters.
std::pair<Model, ParameterBundle> BuildModel(const ModelConfig& config);

// Copies bundle values onto a tape: trainable entries as leaves, buffers as
// constants. Throws NanError if any value is NaN.
template <typename T>
std::vector<ad::Var<T>> BindParameters(ad::Tape<T>& tape,
                                       const ParameterBundle& params);

}  // namespace fedmask

#endif  // FEDMASK_MODEL_H_
