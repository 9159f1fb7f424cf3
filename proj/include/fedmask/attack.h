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
#ifndef FEDMASK_ATTACK_H_
#define FEDMASK_ATTACK_H_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "fedmask/model.h"
#include "fedmask/obfuscation.h"
#include "fedmask/parameter_bundle.h"
#include "fedmask/tensor.h"

namespace fedmask {

// What an eavesdropper holds: the (possibly obfuscated) single-sample
// gradient G and the model parameters W it was computed at.
struct GradientCapture {
  ParameterBundle gradients;
  ParameterBundle params;
  ObfuscationSpec obfuscation;
};

// G = dL(F(x, W), y)/dW for one sample at 64-bit precision, BatchNorm on
// stored statistics, then obfuscated. image: [C, H, W] or [1, C, H, W].
GradientCapture CaptureGradient(const Model& model, const ParameterBundle& params,
                                const Tensor<double>& image, int label,
                                const ObfuscationSpec& obfuscation = {});

// Analytic label extraction: the class whose classifier weight-gradient row
// has the most negative sum over its non-NaN entries. Throws
// LabelInferenceError when no row is negative or every row is masked out.
int InferLabel(const Model& model, const GradientCapture& capture);

enum class StopReason { kConverged, kMaxIterations };

std::string_view StopReasonName(StopReason reason);

struct AttackConfig {
  double learning_rate = 0.03;
  double weight_decay = 0.01;
  std::size_t checkpoint_interval = 30;
  std::size_t max_iterations = 3000;
  // A checkpoint improves when loss < previous checkpoint * (1 - tolerance).
  double tolerance = 1e-6;
  std::uint64_t seed = 0;
  // Starting image [C, H, W]; default uniform [0, 1) from `seed`.
  std::optional<Tensor<double>> init;
  // Skip label inference and use this class.
  std::optional<int> label;

  void Validate() const;
};

struct AttackResult {
  Tensor<double> reconstruction;  // [C, H, W], best-loss iterate
  int label = -1;
  bool label_inferred = false;  // false: soft label optimized jointly
  double best_loss = 0.0;
  // Matching loss at iteration 0, checkpoint_interval, 2 checkpoint_interval, ...
  std::vector<double> checkpoint_losses;
  std::size_t iterations = 0;
  StopReason stop = StopReason::kMaxIterations;
};

// iDLG: Adam on the dummy image to minimize the gradient-matching loss.
// Stops once two consecutive checkpoints each fail to improve on their
// predecessor, or at max_iterations, or on a non-finite loss.
AttackResult RunAttack(const Model& model, const GradientCapture& capture,
                       const AttackConfig& config);

}  // namespace fedmask

#endif  // FEDMASK_ATTACK_H_
