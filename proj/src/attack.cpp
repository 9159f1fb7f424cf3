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
#include "fedmask/attack.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "fedmask/error.h"
#include "fedmask/matching.h"
#include "fedmask/rng.h"
#include "fedmask/training.h"

namespace fedmask {
namespace {

Tensor<double> AsBatch(const Model& model, const Tensor<double>& image) {
  const Shape chw = model.input_shape();
  if (image.shape() == chw) {
    return image.Reshaped({1, chw[0], chw[1], chw[2]});
  }
  if (image.shape() == Shape{1, chw[0], chw[1], chw[2]}) return image;
  throw ShapeError("image " + ShapeToString(image.shape()) + " does not fit model input " +
                   ShapeToString(chw));
}

}  // namespace

std::string_view StopReasonName(StopReason reason) {
  return reason == StopReason::kConverged ? "converged" : "max_iter";
}

GradientCapture CaptureGradient(const Model& model, const ParameterBundle& params,
                                const Tensor<double>& image, int label,
                                const ObfuscationSpec& obfuscation) {
  const int labels[] = {label};
  const LossAndGradients lg =
      ComputeLossAndGradients(model, params, AsBatch(model, image), labels,
                              BatchNormMode::kRunningStatistics, Precision::kFloat64);
  return {Obfuscate(lg.gradients, obfuscation), params, obfuscation};
}

int InferLabel(const Model& model, const GradientCapture& capture) {
  const Tensor<double>& g = capture.gradients.entry(model.head_weight_entry()).tensor;
  const std::size_t classes = g.dim(0), width = g.dim(1);
  int best = -1;
  double best_sum = 0.0;
  for (std::size_t k = 0; k < classes; ++k) {
    double sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t j = 0; j < width; ++j) {
      const double v = g[k * width + j];
      if (std::isnan(v)) continue;
      sum += v;
      ++seen;
    }
    if (seen > 0 && sum < best_sum) {
      best_sum = sum;
      best = static_cast<int>(k);
    }
  }
  if (best < 0) throw LabelInferenceError("label inference failed: no negative row");
  return best;
}

void AttackConfig::Validate() const {
  if (!(learning_rate > 0.0)) throw InvalidArgument("attack: lr must be > 0");
  if (!(weight_decay >= 0.0)) throw InvalidArgument("attack: weight decay must be >= 0");
  if (checkpoint_interval == 0) {
    throw InvalidArgument("attack: checkpoint interval must be >= 1");
  }
  if (max_iterations == 0) throw InvalidArgument("attack: max_iterations must be >= 1");
}

AttackResult RunAttack(const Model& model, const GradientCapture& capture,
                       const AttackConfig& config) {
  config.Validate();
  capture.params.RequireSameLayout(capture.gradients, "attack capture");
  const Shape chw = model.input_shape();
  const Shape batch = {1, chw[0], chw[1], chw[2]};

  Tensor<double> x(batch);
  if (config.init) {
    x = AsBatch(model, *config.init);
  } else {
    Rng rng = MakeRng(DeriveSeed(config.seed, {0x1417a}));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : x.data()) v = u(rng);
  }

  AttackResult result;
  Tensor<double> logits;  // soft label when inference fails
  bool joint = false;
  if (config.label) {
    result.label = *config.label;
  } else {
    try {
      result.label = InferLabel(model, capture);
      result.label_inferred = true;
    } catch (const LabelInferenceError&) {
      Rng rng = MakeRng(DeriveSeed(config.seed, {0x1abe1}));
      std::normal_distribution<double> n(0.0, 1.0);
      logits = Tensor<double>({1, model.num_classes()});
      for (auto& v : logits.data()) v = n(rng);
      joint = true;
    }
  }

  OptimizerSpec spec;
  spec.kind = OptimizerKind::kAdam;
  spec.learning_rate = config.learning_rate;
  spec.weight_decay = config.weight_decay;
  Optimizer x_opt(spec, x.size());
  Optimizer y_opt(spec, joint ? logits.size() : 0);

  double best = std::numeric_limits<double>::infinity();
  Tensor<double> best_x = x;
  Tensor<double> best_logits = logits;
  double previous_checkpoint = std::numeric_limits<double>::infinity();
  int failures = 0;
  result.stop = StopReason::kMaxIterations;

  for (std::size_t it = 0;; ++it) {
    const MatchingEvaluation eval =
        joint ? EvaluateMatchingSoftLabel(model, capture.params, x, logits,
                                          capture.gradients)
              : EvaluateMatching(model, capture.params, x, result.label,
                                 capture.gradients);
    if (!std::isfinite(eval.loss) || !eval.input_gradient.AllFinite()) break;
    if (eval.loss < best) {
      best = eval.loss;
      best_x = x;
      best_logits = logits;
    }
    if (it % config.checkpoint_interval == 0) {
      result.checkpoint_losses.push_back(eval.loss);
      if (eval.loss < previous_checkpoint * (1.0 - config.tolerance)) {
        failures = 0;
      } else if (++failures == 2) {
        result.stop = StopReason::kConverged;
        break;
      }
      previous_checkpoint = eval.loss;
    }
    if (it == config.max_iterations) break;
    x_opt.Step(x.data(), eval.input_gradient.data());
    if (joint) y_opt.Step(logits.data(), eval.label_gradient.data());
    result.iterations = it + 1;
  }

  if (!std::isfinite(best)) {
    throw NanError("attack: matching loss is not finite at the starting point");
  }
  result.best_loss = best;
  result.reconstruction = best_x.Reshaped(chw);
  if (joint) {
    const auto row = best_logits.data();
    result.label = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return result;
}

}  // namespace fedmask
