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
#include "fedmask/autodiff.h"

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "gtest/gtest.h"
#include "fedmask/error.h"
#include "test_util.h"

namespace fedmask::ad {
namespace {

using ::fedmask::testing::CentralDifferences;
using ::fedmask::testing::MaxRelativeError;
using ::fedmask::testing::RandomAwayFromZero;
using ::fedmask::testing::RandomTensor;

using VarD = Var<double>;
using OpFn = std::function<VarD(Tape<double>&, const std::vector<VarD>&)>;

constexpr double kFirstOrderTol = 1e-4;
constexpr double kSecondOrderTol = 1e-4;

// Scalarizes op(inputs) with a fixed random projection so every output
// element contributes to the checked gradient.
VarD Project(const VarD& out, const Tensor<double>& weights) {
  if (out.shape().empty()) return out;
  return Sum(out * out.tape().Constant(weights));
}

struct OpCase {
  std::string name;
  std::vector<Tensor<double>> inputs;
  OpFn op;
};

double EvalProjected(const OpCase& c, const std::vector<Tensor<double>>& inputs,
                     const Tensor<double>& weights) {
  Tape<double> tape;
  std::vector<VarD> vars;
  for (const auto& t : inputs) vars.push_back(tape.Leaf(t));
  return Project(c.op(tape, vars), weights).value().item();
}

Shape OutputShape(const OpCase& c) {
  Tape<double> tape;
  std::vector<VarD> vars;
  for (const auto& t : c.inputs) vars.push_back(tape.Leaf(t));
  return c.op(tape, vars).shape();
}

// Gradient of the projected output w.r.t. input `which`, as a flat vector.
std::vector<double> AnalyticGradient(const OpCase& c, const Tensor<double>& weights,
                                     std::size_t which) {
  Tape<double> tape;
  std::vector<VarD> vars;
  for (const auto& t : c.inputs) vars.push_back(tape.Leaf(t));
  const VarD y = Project(c.op(tape, vars), weights);
  const VarD wrt[] = {vars[which]};
  const auto g = tape.Gradient(y, wrt);
  return g[0].value().vector();
}

// h(inputs) = <R2, d(projected)/d(input a)>; returns dh/d(input b).
std::vector<double> AnalyticSecondOrder(const OpCase& c, const Tensor<double>& weights,
                                        const Tensor<double>& r2, std::size_t a,
                                        std::size_t b) {
  Tape<double> tape;
  std::vector<VarD> vars;
  for (const auto& t : c.inputs) vars.push_back(tape.Leaf(t));
  const VarD y = Project(c.op(tape, vars), weights);
  const VarD wrt_a[] = {vars[a]};
  const VarD ga = tape.Gradient(y, wrt_a, /*create_graph=*/true)[0];
  const VarD h = Sum(ga * tape.Constant(r2));
  const VarD wrt_b[] = {vars[b]};
  return tape.Gradient(h, wrt_b)[0].value().vector();
}

double EvalSecondOrder(const OpCase& c, const std::vector<Tensor<double>>& inputs,
                       const Tensor<double>& weights, const Tensor<double>& r2,
                       std::size_t a) {
  Tape<double> tape;
  std::vector<VarD> vars;
  for (const auto& t : inputs) vars.push_back(tape.Leaf(t));
  const VarD y = Project(c.op(tape, vars), weights);
  const VarD wrt_a[] = {vars[a]};
  const VarD ga = tape.Gradient(y, wrt_a, /*create_graph=*/true)[0];
  return Sum(ga * tape.Constant(r2)).value().item();
}

std::vector<OpCase> AllOpCases(std::mt19937_64& rng) {
  std::vector<OpCase> cases;
  auto rt = [&](const Shape& s) { return RandomTensor(s, rng); };
  cases.push_back({"add", {rt({3, 4}), rt({3, 4})},
                   [](auto&, const auto& v) { return v[0] + v[1]; }});
  cases.push_back({"sub", {rt({3, 4}), rt({3, 4})},
                   [](auto&, const auto& v) { return v[0] - v[1]; }});
  cases.push_back({"mul", {rt({2, 5}), rt({2, 5})},
                   [](auto&, const auto& v) { return v[0] * v[1]; }});
  cases.push_back({"scale", {rt({7})},
                   [](auto&, const auto& v) { return Scale(v[0], 2.5); }});
  cases.push_back({"pow", {RandomTensor({6}, rng, 0.5, 2.0)},
                   [](auto&, const auto& v) { return Pow(v[0], -0.5); }});
  cases.push_back({"relu", {RandomAwayFromZero({3, 5}, rng)},
                   [](auto&, const auto& v) { return Relu(v[0]); }});
  cases.push_back({"sum", {rt({2, 3, 2})},
                   [](auto&, const auto& v) { return Sum(v[0]); }});
  cases.push_back({"broadcast_scalar", {rt({})},
                   [](auto&, const auto& v) { return BroadcastScalar(v[0], {3, 2}); }});
  cases.push_back({"channel_sum", {rt({2, 3, 2, 2})},
                   [](auto&, const auto& v) { return ChannelSum(v[0]); }});
  cases.push_back({"broadcast_channel", {rt({3})},
                   [](auto&, const auto& v) {
                     return BroadcastChannel(v[0], {2, 3, 2, 2});
                   }});
  cases.push_back({"row_sum", {rt({3, 4})},
                   [](auto&, const auto& v) { return RowSum(v[0]); }});
  cases.push_back({"broadcast_rows", {rt({3})},
                   [](auto&, const auto& v) { return BroadcastRows(v[0], 4); }});
  cases.push_back({"reshape", {rt({2, 6})},
                   [](auto&, const auto& v) { return Reshape(v[0], {3, 4}); }});
  cases.push_back({"transpose", {rt({2, 5})},
                   [](auto&, const auto& v) { return Transpose(v[0]); }});
  cases.push_back({"matmul", {rt({3, 4}), rt({4, 2})},
                   [](auto&, const auto& v) { return MatMul(v[0], v[1]); }});
  cases.push_back({"conv2d_same", {rt({2, 2, 5, 5}), rt({3, 2, 3, 3})},
                   [](auto&, const auto& v) { return Conv2d(v[0], v[1], 1); }});
  cases.push_back({"conv2d_valid", {rt({1, 2, 5, 4}), rt({2, 2, 3, 2})},
                   [](auto&, const auto& v) { return Conv2d(v[0], v[1], 0); }});
  cases.push_back({"conv2d_input_grad", {rt({2, 3, 4, 4}), rt({3, 2, 3, 3})},
                   [](auto&, const auto& v) {
                     return Conv2dInputGrad(v[0], v[1], 1, {2, 2, 4, 4});
                   }});
  cases.push_back({"conv2d_weight_grad", {rt({2, 2, 4, 4}), rt({2, 3, 4, 4})},
                   [](auto&, const auto& v) {
                     return Conv2dWeightGrad(v[0], v[1], 1, {3, 2, 3, 3});
                   }});
  cases.push_back({"avg_pool2", {rt({2, 2, 5, 4})},
                   [](auto&, const auto& v) { return AvgPool2(v[0]); }});
  cases.push_back({"avg_pool2_adjoint", {rt({2, 2, 2, 2})},
                   [](auto&, const auto& v) {
                     return AvgPool2Adjoint(v[0], {2, 2, 5, 4});
                   }});
  cases.push_back({"softmax", {rt({2, 4})},
                   [](auto&, const auto& v) { return Softmax(v[0]); }});
  cases.push_back({"log_softmax", {rt({2, 4})},
                   [](auto&, const auto& v) { return LogSoftmax(v[0]); }});
  cases.push_back({"softmax_cross_entropy", {rt({3, 4}), RandomTensor({3, 4}, rng, 0.0, 1.0)},
                   [](auto&, const auto& v) { return SoftmaxCrossEntropy(v[0], v[1]); }});
  return cases;
}

TEST(AutodiffTest, IdentityMatmul) {
  Tape<double> tape;
  const auto eye = tape.Constant(Tensor<double>({2, 2}, {1, 0, 0, 1}));
  const auto m = tape.Constant(Tensor<double>({2, 2}, {1.5, -2, 3, 4.25}));
  EXPECT_EQ(MatMul(eye, m).value().vector(), (std::vector<double>{1.5, -2, 3, 4.25}));
}

TEST(AutodiffTest, ReluDefinition) {
  Tape<double> tape;
  const auto x = tape.Constant(Tensor<double>({2}, {-1.5, 2.0}));
  EXPECT_EQ(Relu(x).value().vector(), (std::vector<double>{0.0, 2.0}));
}

TEST(AutodiffTest, SquareDerivative) {
  Tape<double> tape;
  const auto x = tape.Leaf(Tensor<double>::Scalar(3.0));
  const auto y = x * x;
  const VarD wrt[] = {x};
  EXPECT_DOUBLE_EQ(tape.Gradient(y, wrt)[0].value().item(), 6.0);
}

TEST(AutodiffTest, LinearFormDerivative) {
  Tape<double> tape;
  const auto w = tape.Leaf(Tensor<double>({2}, {0.3, -0.7}));
  const auto x = tape.Constant(Tensor<double>({2}, {1, 2}));
  const VarD wrt[] = {w};
  EXPECT_EQ(tape.Gradient(Sum(w * x), wrt)[0].value().vector(),
            (std::vector<double>{1, 2}));
}

TEST(AutodiffTest, SoftmaxCrossEntropyIsStableForLargeLogits) {
  Tape<double> tape;
  const auto z = tape.Leaf(Tensor<double>({1, 3}, {1000.0, 0.0, -1000.0}));
  const auto t = tape.Constant(Tensor<double>({1, 3}, {1, 0, 0}));
  const auto loss = SoftmaxCrossEntropy(z, t);
  EXPECT_NEAR(loss.value().item(), 0.0, 1e-12);
  const VarD wrt[] = {z};
  EXPECT_TRUE(tape.Gradient(loss, wrt)[0].value().AllFinite());
}

TEST(AutodiffTest, EveryOpMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  for (const OpCase& c : AllOpCases(rng)) {
    SCOPED_TRACE(c.name);
    const Tensor<double> weights = RandomTensor(OutputShape(c), rng);
    for (std::size_t k = 0; k < c.inputs.size(); ++k) {
      const auto analytic = AnalyticGradient(c, weights, k);
      const auto numeric = CentralDifferences(
          [&](std::span<const double> x) {
            auto inputs = c.inputs;
            inputs[k] = Tensor<double>(inputs[k].shape(), {x.begin(), x.end()});
            return EvalProjected(c, inputs, weights);
          },
          c.inputs[k].data());
      EXPECT_LT(MaxRelativeError(analytic, numeric), kFirstOrderTol) << "input " << k;
    }
  }
}

// Backward rules are built from recorded ops, so gradients of gradients must
// also agree with finite differences of the first-order gradient.
TEST(AutodiffTest, EveryOpSecondOrderMatchesFiniteDifferences) {
  std::mt19937_64 rng(12);
  for (const OpCase& c : AllOpCases(rng)) {
    SCOPED_TRACE(c.name);
    const Tensor<double> weights = RandomTensor(OutputShape(c), rng);
    for (std::size_t a = 0; a < c.inputs.size(); ++a) {
      const Tensor<double> r2 = RandomTensor(c.inputs[a].shape(), rng);
      for (std::size_t b = 0; b < c.inputs.size(); ++b) {
        const auto analytic = AnalyticSecondOrder(c, weights, r2, a, b);
        const auto numeric = CentralDifferences(
            [&](std::span<const double> x) {
              auto inputs = c.inputs;
              inputs[b] = Tensor<double>(inputs[b].shape(), {x.begin(), x.end()});
              return EvalSecondOrder(c, inputs, weights, r2, a);
            },
            c.inputs[b].data());
        EXPECT_LT(MaxRelativeError(analytic, numeric), kSecondOrderTol)
            << "d/d input " << b << " of grad wrt input " << a;
      }
    }
  }
}

// Random small CNNs assembled directly from ops: conv, relu, pool, dense,
// cross-entropy. Each input and kernel is checked against finite differences.
TEST(AutodiffTest, ComposedCnnGraphsMatchFiniteDifferences) {
  struct Arch {
    std::size_t channels, size, filters, kernel, pad, classes;
  };
  const Arch archs[] = {{1, 6, 2, 3, 1, 3}, {2, 5, 3, 3, 0, 4}, {3, 8, 2, 5, 2, 2}};
  std::mt19937_64 rng(21);
  for (const Arch& a : archs) {
    SCOPED_TRACE(a.size);
    const std::size_t conv_out = a.size + 2 * a.pad - a.kernel + 1;
    const std::size_t pooled = conv_out / 2;
    const std::size_t features = a.filters * pooled * pooled;
    const std::vector<Tensor<double>> inputs = {
        RandomTensor({2, a.channels, a.size, a.size}, rng),
        RandomTensor({a.filters, a.channels, a.kernel, a.kernel}, rng),
        RandomTensor({a.filters}, rng),
        RandomTensor({a.classes, features}, rng),
    };
    Tensor<double> targets({2, a.classes});
    targets[0] = 1.0;
    targets[a.classes + 1] = 1.0;
    auto build = [&](Tape<double>& tape, const std::vector<VarD>& v) {
      VarD h = Conv2d(v[0], v[1], a.pad);
      h = h + BroadcastChannel(v[2], h.shape());
      h = AvgPool2(Relu(h));
      h = Reshape(h, {2, features});
      const VarD logits = MatMul(h, Transpose(v[3]));
      return SoftmaxCrossEntropy(logits, tape.Constant(targets));
    };
    auto eval = [&](const std::vector<Tensor<double>>& in) {
      Tape<double> tape;
      std::vector<VarD> v;
      for (const auto& t : in) v.push_back(tape.Leaf(t));
      return build(tape, v).value().item();
    };
    Tape<double> tape;
    std::vector<VarD> v;
    for (const auto& t : inputs) v.push_back(tape.Leaf(t));
    const auto grads = tape.Gradient(build(tape, v), v);
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      const auto numeric = CentralDifferences(
          [&](std::span<const double> x) {
            auto in = inputs;
            in[k] = Tensor<double>(in[k].shape(), {x.begin(), x.end()});
            return eval(in);
          },
          inputs[k].data());
      EXPECT_LT(MaxRelativeError(grads[k].value().data(), numeric), kFirstOrderTol)
          << "input " << k;
    }
  }
}

TEST(AutodiffTest, GradientIsLinear) {
  std::mt19937_64 rng(3);
  const Tensor<double> x0 = RandomTensor({2, 3}, rng);
  const Tensor<double> w0 = RandomTensor({3, 4}, rng);
  const double a = 0.37, b = -1.9;
  auto grads = [&](int which) {
    Tape<double> tape;
    const auto x = tape.Leaf(x0);
    const auto w = tape.Leaf(w0);
    const auto f = Sum(Relu(MatMul(x, w)));
    const auto g = Sum(Softmax(MatMul(x, w)) * MatMul(x, w));
    VarD y = which == 0 ? f : which == 1 ? g : Scale(f, a) + Scale(g, b);
    const VarD wrt[] = {x, w};
    const auto out = tape.Gradient(y, wrt);
    return std::vector<Tensor<double>>{out[0].value(), out[1].value()};
  };
  const auto gf = grads(0), gg = grads(1), gc = grads(2);
  for (std::size_t k = 0; k < 2; ++k) {
    for (std::size_t i = 0; i < gc[k].size(); ++i) {
      EXPECT_NEAR(gc[k][i], a * gf[k][i] + b * gg[k][i], 1e-12);
    }
  }
}

TEST(AutodiffTest, GradientIsDeterministic) {
  std::mt19937_64 rng(5);
  const Tensor<double> x0 = RandomTensor({2, 2, 6, 6}, rng);
  const Tensor<double> k0 = RandomTensor({3, 2, 3, 3}, rng);
  auto run = [&] {
    Tape<double> tape;
    const auto x = tape.Leaf(x0);
    const auto k = tape.Leaf(k0);
    const auto y = Sum(Relu(AvgPool2(Conv2d(x, k, 1))));
    const VarD wrt[] = {x, k};
    const auto g = tape.Gradient(y, wrt);
    return std::make_pair(g[0].value(), g[1].value());
  };
  const auto a = run();
  const auto b = run();
  EXPECT_TRUE(BitwiseEqual(a.first, b.first));
  EXPECT_TRUE(BitwiseEqual(a.second, b.second));
}

TEST(AutodiffTest, UnreachedLeafGetsZeros) {
  Tape<double> tape;
  const auto x = tape.Leaf(Tensor<double>({2}, {1, 2}));
  const auto unused = tape.Leaf(Tensor<double>({3}, {1, 2, 3}));
  const VarD wrt[] = {x, unused};
  const auto g = tape.Gradient(Sum(x), wrt);
  EXPECT_EQ(g[1].value().vector(), (std::vector<double>{0, 0, 0}));
}

TEST(AutodiffTest, NonScalarRootIsRejected) {
  Tape<double> tape;
  const auto x = tape.Leaf(Tensor<double>({2}, {1, 2}));
  const VarD wrt[] = {x};
  EXPECT_THROW(tape.Gradient(x * x, wrt), InvalidArgument);
}

TEST(AutodiffTest, ForeignVariableIsRejected) {
  Tape<double> tape, other;
  const auto x = tape.Leaf(Tensor<double>({2}, {1, 2}));
  const auto y = other.Leaf(Tensor<double>({2}, {1, 2}));
  const VarD wrt[] = {y};
  EXPECT_THROW(tape.Gradient(Sum(x), wrt), InvalidArgument);
}

TEST(AutodiffTest, NonLeafWrtIsRejected) {
  Tape<double> tape;
  const auto x = tape.Leaf(Tensor<double>({2}, {1, 2}));
  const auto y = x * x;
  const VarD wrt[] = {y};
  EXPECT_THROW(tape.Gradient(Sum(y), wrt), InvalidArgument);
}

TEST(AutodiffTest, ShapeMismatchNamesTheOp) {
  Tape<double> tape;
  const auto a = tape.Leaf(Tensor<double>({2, 3}));
  const auto b = tape.Leaf(Tensor<double>({2, 3}));
  try {
    MatMul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("matmul"), std::string::npos);
  }
}

TEST(AutodiffTest, FloatTapeAgreesWithDouble) {
  std::mt19937_64 rng(8);
  const Tensor<double> x0 = RandomTensor({1, 1, 5, 5}, rng);
  const Tensor<double> k0 = RandomTensor({2, 1, 3, 3}, rng);
  Tape<double> td;
  Tape<float> tf;
  const auto yd = Sum(Conv2d(td.Constant(x0), td.Constant(k0), 1));
  const auto yf =
      Sum(Conv2d(tf.Constant(x0.Cast<float>()), tf.Constant(k0.Cast<float>()), 1));
  EXPECT_NEAR(yd.value().item(), yf.value().item(), 1e-4);
}

}  // namespace
}  // namespace fedmask::ad
