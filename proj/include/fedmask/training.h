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
#ifndef FEDMASK_TRAINING_H_
#define FEDMASK_TRAINING_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fedmask/dataset.h"
#include "fedmask/model.h"
#include "fedmask/parameter_bundle.h"

namespace fedmask {

enum class Precision { kFloat32, kFloat64 };

enum class OptimizerKind { kSgd, kAdam };

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::kAdam;
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // L2 penalty folded into the gradient (g += weight_decay * w).
  double weight_decay = 0.0;
};

// Stateful first-order optimizer over a flat parameter vector.
class Optimizer {
 public:
  Optimizer(const OptimizerSpec& spec, std::size_t size);

  void Step(std::span<double> params, std::span<const double> grads);
  std::size_t steps() const { return step_; }

 private:
  OptimizerSpec spec_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t step_ = 0;
};

struct LossAndGradients {
  double loss = 0.0;
  // Same layout as the parameters; buffers (running statistics) get zeros.
  ParameterBundle gradients;
  // Batch statistics per BatchNorm layer (kBatchStatistics mode only).
  std::vector<BatchNormStats<double>> batch_stats;
};

// Mean cross-entropy over the batch and its parameter gradients.
// images: [N, C, H, W]; labels: N class indices.
LossAndGradients ComputeLossAndGradients(
    const Model& model, const ParameterBundle& params, const Tensor<double>& images,
    std::span<const int> labels,
    BatchNormMode mode = BatchNormMode::kBatchStatistics,
    Precision precision = Precision::kFloat64);

// One-hot [N, classes]; throws InvalidArgument on a label out of range.
template <typename T>
Tensor<T> OneHot(std::span<const int> labels, std::size_t classes);

struct TrainOptions {
  std::size_t epochs = 1;
  std::size_t batch_size = 32;
  OptimizerSpec optimizer;
  Precision precision = Precision::kFloat32;
  std::uint64_t seed = 0;
  double batchnorm_momentum = 0.1;
};

// Mini-batch training for `epochs` passes over the shard, reshuffled each
// epoch from `seed`. Running statistics move with the configured momentum.
ParameterBundle TrainEpochs(const Model& model, ParameterBundle params,
                            const DataShard& shard, const TrainOptions& options);

struct Evaluation {
  double accuracy = 0.0;
  double loss = 0.0;
};

// Inference with running statistics.
Evaluation Evaluate(const Model& model, const ParameterBundle& params,
                    const Dataset& data, std::size_t batch_size = 250,
                    Precision precision = Precision::kFloat32);

}  // namespace fedmask

#endif  // FEDMASK_TRAINING_H_
