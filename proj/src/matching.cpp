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
#include "fedmask/matching.h"

#include <cmath>
#include <vector>

#include "fedmask/error.h"
#include "fedmask/training.h"

namespace fedmask {
namespace {

using Tape = ad::Tape<double>;
using Var = ad::Var<double>;

struct Objective {
  Var loss;
  Var input;
  Var label_logits;
};

// Records M on `tape`. `soft_logits` empty means fixed `label`.
Objective RecordObjective(Tape& tape, const Model& model,
                          const ParameterBundle& params,
                          const Tensor<double>& dummy_input, int label,
                          const Tensor<double>* soft_logits,
                          const ParameterBundle& target_grads) {
  params.RequireSameLayout(target_grads, "matching loss target gradients");
  if (dummy_input.HasNan()) throw NanError("matching loss: dummy input contains NaN");
  const Shape expected = {1, model.config().channels, model.config().height,
                          model.config().width};
  if (dummy_input.shape() != expected) {
    throw ShapeError("matching loss: dummy input " + ShapeToString(dummy_input.shape()) +
                     ", expected " + ShapeToString(expected));
  }

  Objective obj;
  const std::vector<Var> vars = BindParameters(tape, params);
  obj.input = tape.Leaf(dummy_input);
  Var targets;
  if (soft_logits != nullptr) {
    if (soft_logits->shape() != Shape{1, model.num_classes()}) {
      throw ShapeError("matching loss: label logits " +
                       ShapeToString(soft_logits->shape()));
    }
    obj.label_logits = tape.Leaf(*soft_logits);
    targets = ad::Softmax(obj.label_logits);
  } else {
    const int labels[] = {label};
    targets = tape.Constant(OneHot<double>(labels, model.num_classes()));
  }
  const Var logits =
      model.Forward<double>(tape, vars, obj.input, BatchNormMode::kRunningStatistics);
  const Var ce = ad::SoftmaxCrossEntropy(logits, targets);

  std::vector<Var> trainable;
  std::vector<std::size_t> entry_of;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params.entry(i).trainable) {
      trainable.push_back(vars[i]);
      entry_of.push_back(i);
    }
  }
  const std::vector<Var> grads = tape.Gradient(ce, trainable, /*create_graph=*/true);

  Var total;
  for (std::size_t k = 0; k < grads.size(); ++k) {
    const Tensor<double>& target = target_grads.entry(entry_of[k]).tensor;
    Tensor<double> dense = target;
    Tensor<double> keep(target.shape(), 1.0);
    bool masked = false;
    for (std::size_t i = 0; i < dense.size(); ++i) {
      if (std::isnan(dense[i])) {
        dense[i] = 0.0;
        keep[i] = 0.0;
        masked = true;
      }
    }
    Var diff = grads[k] - tape.Constant(std::move(dense));
    if (masked) diff = diff * tape.Constant(std::move(keep));
    Var term = ad::Sum(diff * diff);
    total = total.valid() ? total + term : term;
  }
  if (!total.valid()) throw InvalidArgument("matching loss: model has no trainable entries");
  obj.loss = total;
  return obj;
}

}  // namespace

MatchingEvaluation EvaluateMatching(const Model& model, const ParameterBundle& params,
                                    const Tensor<double>& dummy_input, int label,
                                    const ParameterBundle& target_grads) {
  Tape tape;
  const Objective obj =
      RecordObjective(tape, model, params, dummy_input, label, nullptr, target_grads);
  const Var wrt[] = {obj.input};
  const auto g = tape.Gradient(obj.loss, wrt);
  return {obj.loss.value().item(), g[0].value(), {}};
}

MatchingEvaluation EvaluateMatchingSoftLabel(const Model& model,
                                             const ParameterBundle& params,
                                             const Tensor<double>& dummy_input,
                                             const Tensor<double>& label_logits,
                                             const ParameterBundle& target_grads) {
  Tape tape;
  const Objective obj = RecordObjective(tape, model, params, dummy_input, -1,
                                        &label_logits, target_grads);
  const Var wrt[] = {obj.input, obj.label_logits};
  const auto g = tape.Gradient(obj.loss, wrt);
  return {obj.loss.value().item(), g[0].value(), g[1].value()};
}

double MatchingLoss(const Model& model, const ParameterBundle& params,
                    const Tensor<double>& dummy_input, int label,
                    const ParameterBundle& target_grads) {
  Tape tape;
  return RecordObjective(tape, model, params, dummy_input, label, nullptr, target_grads)
      .loss.value()
      .item();
}

}  // namespace fedmask
