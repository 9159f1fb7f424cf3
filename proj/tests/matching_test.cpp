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
#include <limits>
#include <random>
#include <vector>

#include "gtest/gtest.h"
#include "fedmask/error.h"
#include "fedmask/model.h"
#include "fedmask/training.h"
#include "test_util.h"

namespace fedmask {
namespace {

using ::fedmask::testing::CentralDifferences;
using ::fedmask::testing::MaxRelativeError;
using ::fedmask::testing::RandomTensor;

constexpr double kSecondOrderTol = 1e-3;

ModelConfig DenseOnly() {
  ModelConfig c;
  c.channels = 1;
  c.height = 3;
  c.width = 3;
  c.classes = 4;
  c.seed = 1;
  return c;
}

ModelConfig ConvDense() {
  ModelConfig c;
  c.channels = 1;
  c.height = 6;
  c.width = 6;
  c.classes = 3;
  c.layers = ParseLayers("conv2,bn,relu,pool");
  c.seed = 2;
  return c;
}

ParameterBundle TrueGradient(const Model& model, const ParameterBundle& params,
                             const Tensor<double>& x, int label) {
  const int labels[] = {label};
  return ComputeLossAndGradients(model, params, x, labels,
                                 BatchNormMode::kRunningStatistics, Precision::kFloat64)
      .gradients;
}

// Running statistics away from the identity so BatchNorm participates.
void PerturbBatchNorm(ParameterBundle& params, std::mt19937_64& rng) {
  for (auto& e : params.entries()) {
    if (e.tag != ParamTag::kMaskExempt) continue;
    const bool var = e.name.ends_with("running_var");
    e.tensor = RandomTensor(e.tensor.shape(), rng, var ? 0.5 : -0.5, var ? 2.0 : 0.5);
  }
}

void ExpectMatchesFiniteDifferences(const ModelConfig& config, std::uint64_t seed) {
  auto [model, params] = BuildModel(config);
  std::mt19937_64 rng(seed);
  PerturbBatchNorm(params, rng);
  const Shape in = {1, config.channels, config.height, config.width};
  const Tensor<double> secret = RandomTensor(in, rng, 0.0, 1.0);
  const ParameterBundle target = TrueGradient(model, params, secret, 1);
  for (int trial = 0; trial < 3; ++trial) {
    const Tensor<double> dummy = RandomTensor(in, rng, 0.0, 1.0);
    const auto eval = EvaluateMatching(model, params, dummy, 1, target);
    const auto numeric = CentralDifferences(
        [&](std::span<const double> x) {
          return MatchingLoss(model, params, Tensor<double>(in, {x.begin(), x.end()}),
                              1, target);
        },
        dummy.data());
    EXPECT_GT(eval.loss, 0.0);
    EXPECT_LT(MaxRelativeError(eval.input_gradient.data(), numeric), kSecondOrderTol);
  }
}

TEST(MatchingTest, DenseInputGradientMatchesFiniteDifferences) {
  ExpectMatchesFiniteDifferences(DenseOnly(), 3);
}

TEST(MatchingTest, ConvDenseInputGradientMatchesFiniteDifferences) {
  ExpectMatchesFiniteDifferences(ConvDense(), 4);
}

TEST(MatchingTest, TrueInputIsStationary) {
  for (const ModelConfig& config : {DenseOnly(), ConvDense()}) {
    auto [model, params] = BuildModel(config);
    std::mt19937_64 rng(5);
    PerturbBatchNorm(params, rng);
    const Tensor<double> x =
        RandomTensor({1, config.channels, config.height, config.width}, rng, 0.0, 1.0);
    const ParameterBundle g = TrueGradient(model, params, x, 2);
    const auto eval = EvaluateMatching(model, params, x, 2, g);
    EXPECT_NEAR(eval.loss, 0.0, 1e-24);
    for (double v : eval.input_gradient.data()) EXPECT_NEAR(v, 0.0, 1e-12);
  }
}

// Zero weights give uniform softmax p, so dL/dW = (p - y) x^T, dL/db = p - y
// and M = |p - y|^2 (|x|^2 + 1) = (K - 1)/K (|x|^2 + 1), whose gradient in x
// is 2 (K - 1)/K x.
TEST(MatchingTest, ZeroModelZeroTargetMatchesHandExpansion) {
  auto [model, params] = BuildModel(DenseOnly());
  params = params.ZerosLike();
  const ParameterBundle zero_target = params.ZerosLike();
  std::mt19937_64 rng(6);
  const Tensor<double> x = RandomTensor({1, 1, 3, 3}, rng);
  const double k = 4.0;
  double norm2 = 0.0;
  for (double v : x.data()) norm2 += v * v;
  const auto eval = EvaluateMatching(model, params, x, 3, zero_target);
  EXPECT_NEAR(eval.loss, (k - 1) / k * (norm2 + 1), 1e-12);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_NEAR(eval.input_gradient[i], 2 * (k - 1) / k * x[i], 1e-12);
  }
}

TEST(MatchingTest, NanCoordinatesAreDropped) {
  auto [model, params] = BuildModel(ConvDense());
  std::mt19937_64 rng(7);
  const Tensor<double> secret = RandomTensor({1, 1, 6, 6}, rng, 0.0, 1.0);
  const Tensor<double> dummy = RandomTensor({1, 1, 6, 6}, rng, 0.0, 1.0);
  ParameterBundle target = TrueGradient(model, params, secret, 0);
  std::bernoulli_distribution coin(0.4);
  for (auto& e : target.entries()) {
    if (e.tag == ParamTag::kMaskExempt) continue;
    for (auto& v : e.tensor.data()) {
      if (coin(rng)) v = std::numeric_limits<double>::quiet_NaN();
    }
  }
  // Reference: explicit sum over surviving trainable coordinates.
  const ParameterBundle g = TrueGradient(model, params, dummy, 0);
  double expected = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!g.entry(i).trainable) continue;
    for (std::size_t j = 0; j < g.entry(i).tensor.size(); ++j) {
      const double t = target.entry(i).tensor[j];
      if (!std::isnan(t)) expected += std::pow(g.entry(i).tensor[j] - t, 2);
    }
  }
  const auto eval = EvaluateMatching(model, params, dummy, 0, target);
  EXPECT_NEAR(eval.loss, expected, 1e-12 * std::max(1.0, expected));
  EXPECT_TRUE(eval.input_gradient.AllFinite());

  const auto numeric = CentralDifferences(
      [&](std::span<const double> x) {
        return MatchingLoss(model, params, Tensor<double>({1, 1, 6, 6}, {x.begin(), x.end()}),
                            0, target);
      },
      dummy.data());
  EXPECT_LT(MaxRelativeError(eval.input_gradient.data(), numeric), kSecondOrderTol);
}

TEST(MatchingTest, SoftLabelGradientsMatchFiniteDifferences) {
  auto [model, params] = BuildModel(DenseOnly());
  std::mt19937_64 rng(8);
  const Tensor<double> secret = RandomTensor({1, 1, 3, 3}, rng, 0.0, 1.0);
  const ParameterBundle target = TrueGradient(model, params, secret, 2);
  const Tensor<double> dummy = RandomTensor({1, 1, 3, 3}, rng, 0.0, 1.0);
  const Tensor<double> logits = RandomTensor({1, 4}, rng);
  const auto eval = EvaluateMatchingSoftLabel(model, params, dummy, logits, target);
  auto loss_at = [&](const Tensor<double>& x, const Tensor<double>& z) {
    return EvaluateMatchingSoftLabel(model, params, x, z, target).loss;
  };
  const auto dx = CentralDifferences(
      [&](std::span<const double> v) {
        return loss_at(Tensor<double>(dummy.shape(), {v.begin(), v.end()}), logits);
      },
      dummy.data());
  const auto dz = CentralDifferences(
      [&](std::span<const double> v) {
        return loss_at(dummy, Tensor<double>(logits.shape(), {v.begin(), v.end()}));
      },
      logits.data());
  EXPECT_LT(MaxRelativeError(eval.input_gradient.data(), dx), kSecondOrderTol);
  EXPECT_LT(MaxRelativeError(eval.label_gradient.data(), dz), kSecondOrderTol);
}

TEST(MatchingTest, EvaluationIsDeterministic) {
  auto [model, params] = BuildModel(ConvDense());
  std::mt19937_64 rng(9);
  const Tensor<double> dummy = RandomTensor({1, 1, 6, 6}, rng, 0.0, 1.0);
  const ParameterBundle target =
      TrueGradient(model, params, RandomTensor({1, 1, 6, 6}, rng, 0.0, 1.0), 1);
  const auto a = EvaluateMatching(model, params, dummy, 1, target);
  const auto b = EvaluateMatching(model, params, dummy, 1, target);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_TRUE(BitwiseEqual(a.input_gradient, b.input_gradient));
}

TEST(MatchingTest, ShapeMismatchesAreRejected) {
  auto [model, params] = BuildModel(DenseOnly());
  const ParameterBundle target = params.ZerosLike();
  EXPECT_THROW(EvaluateMatching(model, params, Tensor<double>({1, 1, 3, 4}), 0, target),
               ShapeError);
  EXPECT_THROW(EvaluateMatching(model, params, Tensor<double>({2, 1, 3, 3}), 0, target),
               ShapeError);
  const auto other = BuildModel(ConvDense()).second;
  EXPECT_THROW(EvaluateMatching(model, params, Tensor<double>({1, 1, 3, 3}), 0, other),
               ShapeError);
  Tensor<double> nan_input({1, 1, 3, 3});
  nan_input[0] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(EvaluateMatching(model, params, nan_input, 0, target), NanError);
}

}  // namespace
}  // namespace fedmask
