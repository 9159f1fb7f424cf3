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
#include "fedmask/training.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedmask/error.h"
#include "fedmask/rng.h"

namespace fedmask {

Optimizer::Optimizer(const OptimizerSpec& spec, std::size_t size) : spec_(spec) {
  if (!(spec.learning_rate >= 0.0)) {
    throw InvalidArgument("learning rate must be non-negative");
  }
  if (spec.kind == OptimizerKind::kAdam) {
    m_.assign(size, 0.0);
    v_.assign(size, 0.0);
  }
}

void Optimizer::Step(std::span<double> params, std::span<const double> grads) {
  if (params.size() != grads.size()) {
    throw ShapeError("optimizer: parameter and gradient sizes differ");
  }
  ++step_;
  const double lr = spec_.learning_rate;
  const double wd = spec_.weight_decay;
  if (spec_.kind == OptimizerKind::kSgd) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      params[i] -= lr * (grads[i] + wd * params[i]);
    }
    return;
  }
  if (m_.size() != params.size()) throw ShapeError("optimizer: size changed");
  const double b1 = spec_.beta1, b2 = spec_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i] + wd * params[i];
    m_[i] = b1 * m_[i] + (1.0 - b1) * g;
    v_[i] = b2 * v_[i] + (1.0 - b2) * g * g;
    const double m_hat = m_[i] / c1;
    const double v_hat = v_[i] / c2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + spec_.epsilon);
  }
}

template <typename T>
Tensor<T> OneHot(std::span<const int> labels, std::size_t classes) {
  Tensor<T> out(Shape{labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw InvalidArgument("label " + std::to_string(labels[i]) +
                            " out of range for " + std::to_string(classes) +
                            " classes");
    }
    out[i * classes + labels[i]] = T{1};
  }
  return out;
}

template Tensor<float> OneHot(std::span<const int>, std::size_t);
template Tensor<double> OneHot(std::span<const int>, std::size_t);

namespace {

template <typename T>
LossAndGradients LossAndGradientsImpl(const Model& model,
                                      const ParameterBundle& params,
                                      const Tensor<double>& images,
                                      std::span<const int> labels,
                                      BatchNormMode mode) {
  ad::Tape<T> tape;
  const auto vars = BindParameters(tape, params);
  const auto input = tape.Constant(images.Cast<T>());
  const auto targets = tape.Constant(OneHot<T>(labels, model.num_classes()));
  std::vector<BatchNormStats<T>> stats;
  const auto logits = model.Forward<T>(tape, vars, input, mode, &stats);
  const auto loss = ad::SoftmaxCrossEntropy(logits, targets);
  const auto grads = tape.Gradient(loss, vars, /*create_graph=*/false);

  LossAndGradients out;
  out.loss = static_cast<double>(loss.value().item());
  out.gradients = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    out.gradients.entry(i).tensor = grads[i].value().template Cast<double>();
  }
  for (auto& s : stats) {
    out.batch_stats.push_back({s.mean_entry, s.var_entry,
                               s.mean.template Cast<double>(),
                               s.variance.template Cast<double>(), s.count});
  }
  return out;
}

}  // namespace

LossAndGradients ComputeLossAndGradients(const Model& model,
                                         const ParameterBundle& params,
                                         const Tensor<double>& images,
                                         std::span<const int> labels,
                                         BatchNormMode mode, Precision precision) {
  if (labels.empty()) throw InvalidArgument("loss_and_gradients: empty batch");
  if (images.rank() != 4 || images.dim(0) != labels.size()) {
    throw ShapeError("loss_and_gradients: " + std::to_string(labels.size()) +
                     " labels for images " + ShapeToString(images.shape()));
  }
  return precision == Precision::kFloat32
             ? LossAndGradientsImpl<float>(model, params, images, labels, mode)
             : LossAndGradientsImpl<double>(model, params, images, labels, mode);
}

ParameterBundle TrainEpochs(const Model& model, ParameterBundle params,
                            const DataShard& shard, const TrainOptions& options) {
  if (options.epochs == 0) throw InvalidArgument("train: epochs must be >= 1");
  if (options.batch_size == 0) throw InvalidArgument("train: batch size must be >= 1");
  if (shard.empty()) throw InvalidArgument("train: empty shard");

  // Flat view over trainable entries only.
  std::vector<std::size_t> trainable;
  std::size_t n_trainable = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params.entry(i).trainable) {
      trainable.push_back(i);
      n_trainable += params.entry(i).tensor.size();
    }
  }
  Optimizer optimizer(options.optimizer, n_trainable);
  std::vector<double> flat(n_trainable), flat_grad(n_trainable);
  const double momentum = options.batchnorm_momentum;

  std::vector<std::size_t> order(shard.size());
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = MakeRng(DeriveSeed(options.seed, {0xe70c, epoch}));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      const Tensor<double> images = shard.Images(batch);
      const std::vector<int> labels = shard.Labels(batch);
      const LossAndGradients lg =
          ComputeLossAndGradients(model, params, images, labels,
                                  BatchNormMode::kBatchStatistics, options.precision);

      std::size_t off = 0;
      for (std::size_t i : trainable) {
        auto p = params.entry(i).tensor.data();
        auto g = lg.gradients.entry(i).tensor.data();
        std::copy(p.begin(), p.end(), flat.begin() + off);
        std::copy(g.begin(), g.end(), flat_grad.begin() + off);
        off += p.size();
      }
      optimizer.Step(flat, flat_grad);
      off = 0;
      for (std::size_t i : trainable) {
        auto p = params.entry(i).tensor.data();
        std::copy_n(flat.begin() + off, p.size(), p.begin());
        off += p.size();
      }

      for (const auto& s : lg.batch_stats) {
        auto rm = params.entry(s.mean_entry).tensor.data();
        auto rv = params.entry(s.var_entry).tensor.data();
        // Running variance tracks the unbiased estimate.
        const double unbias =
            s.count > 1 ? static_cast<double>(s.count) / (s.count - 1) : 1.0;
        for (std::size_t c = 0; c < rm.size(); ++c) {
          rm[c] = (1 - momentum) * rm[c] + momentum * s.mean[c];
          rv[c] = (1 - momentum) * rv[c] + momentum * s.variance[c] * unbias;
        }
      }
    }
  }
  return params;
}

namespace {

template <typename T>
void EvaluateBatch(const Model& model, const ParameterBundle& params,
                   const Tensor<double>& images, std::span<const int> labels,
                   std::size_t& correct, double& loss_sum) {
  ad::Tape<T> tape;
  std::vector<ad::Var<T>> vars;
  vars.reserve(params.size());
  for (const auto& e : params.entries()) {
    if (e.tensor.HasNan()) throw NanError("evaluate: parameter '" + e.name + "' is NaN");
    vars.push_back(tape.Constant(e.tensor.template Cast<T>()));
  }
  const auto input = tape.Constant(images.Cast<T>());
  const auto logits =
      model.Forward<T>(tape, vars, input, BatchNormMode::kRunningStatistics);
  const auto targets = tape.Constant(OneHot<T>(labels, model.num_classes()));
  const auto loss = ad::SoftmaxCrossEntropy(logits, targets);
  loss_sum += static_cast<double>(loss.value().item()) * labels.size();
  const std::size_t k = model.num_classes();
  auto z = logits.value().data();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto* row = z.data() + i * k;
    const auto best = std::max_element(row, row + k) - row;
    if (best == labels[i]) ++correct;
  }
}

}  // namespace

Evaluation Evaluate(const Model& model, const ParameterBundle& params,
                    const Dataset& data, std::size_t batch_size,
                    Precision precision) {
  if (data.size() == 0) throw InvalidArgument("evaluate: empty dataset");
  std::size_t correct = 0;
  double loss_sum = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor<double> images = data.Gather(idx);
    const std::span<const int> labels(data.labels.data() + start, end - start);
    if (precision == Precision::kFloat32) {
      EvaluateBatch<float>(model, params, images, labels, correct, loss_sum);
    } else {
      EvaluateBatch<double>(model, params, images, labels, correct, loss_sum);
    }
  }
  return {static_cast<double>(correct) / data.size(), loss_sum / data.size()};
}

}  // namespace fedmask
