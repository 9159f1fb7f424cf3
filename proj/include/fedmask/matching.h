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
#ifndef FEDMASK_MATCHING_H_
#define FEDMASK_MATCHING_H_

#include "fedmask/model.h"
#include "fedmask/parameter_bundle.h"
#include "fedmask/tensor.h"

namespace fedmask {

// Gradient-matching objective
//
//   M(x', y') = sum over trainable coordinates c with G[c] not NaN of
//               (dL(F(x', W), y') / dW [c] - G[c])^2
//
// evaluated at 64-bit precision with BatchNorm on stored statistics.
// NaN coordinates of G are dropped from the sum: a masked coordinate tells
// the attacker nothing, so it must not pull the reconstruction anywhere.
struct MatchingEvaluation {
  double loss = 0.0;
  // dM/dx', same shape as the dummy input.
  Tensor<double> input_gradient;
  // dM/d(label logits) for soft-label evaluation; empty otherwise.
  Tensor<double> label_gradient;
};

// Fixed label. dummy_input: [1, C, H, W].
MatchingEvaluation EvaluateMatching(const Model& model, const ParameterBundle& params,
                                    const Tensor<double>& dummy_input, int label,
                                    const ParameterBundle& target_grads);

// Soft label y' = softmax(label_logits), label_logits: [1, classes].
MatchingEvaluation EvaluateMatchingSoftLabel(const Model& model,
                                             const ParameterBundle& params,
                                             const Tensor<double>& dummy_input,
                                             const Tensor<double>& label_logits,
                                             const ParameterBundle& target_grads);

// Value of M only (no second backward pass).
double MatchingLoss(const Model& model, const ParameterBundle& params,
                    const Tensor<double>& dummy_input, int label,
                    const ParameterBundle& target_grads);

}  // namespace fedmask

#endif  // FEDMASK_MATCHING_H_
