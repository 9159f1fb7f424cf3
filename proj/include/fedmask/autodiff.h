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
#ifndef FEDMASK_AUTODIFF_H_
#define FEDMASK_AUTODIFF_H_

// Reverse-mode differentiation over dense tensors.
//
// Every operation's backward rule is itself written in terms of recorded
// operations. When `Tape::Gradient` runs with `create_graph = true`, the
// gradients it returns are ordinary nodes of the same tape and can be
// differentiated again. Gradient matching needs exactly this: the parameter
// gradient is a function of the input image, and the attack differentiates
// a loss on that gradient with respect to the image.

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fedmask/tensor.h"

namespace fedmask::ad {

template <typename T>
class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape<T>& tape() const { return *tape_; }
  int id() const { return id_; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape<T>* tape_ = nullptr;
  int id_ = -1;
};

template <typename T>
class Tape {
 public:
  // Returns one gradient per input of the node (an invalid Var where the
  // input needs none). `out` is the node itself, `grad` its cotangent.
  using BackwardFn =
      std::function<std::vector<Var<T>>(const Var<T>& out, const Var<T>& grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // A differentiable input (parameter, dummy image, label logits).
  Var<T> Leaf(Tensor<T> value);
  // A value that never receives a gradient.
  Var<T> Constant(Tensor<T> value);

  Var<T> Record(const char* op, Tensor<T> value, std::vector<Var<T>> inputs,
                BackwardFn backward);

  // d(root)/d(wrt[i]) for each requested leaf. `root` must be rank-0.
  // Leaves the root does not depend on get a zero tensor.
  std::vector<Var<T>> Gradient(const Var<T>& root,
                               std::span<const Var<T>> wrt,
                               bool create_graph = false);

  // True while a Gradient() call is in flight and `v` lies on a path to one
  // of the requested leaves. Backward rules use it to skip dead branches.
  bool NeedsGrad(const Var<T>& v) const;

  const Tensor<T>& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  bool is_leaf(int id) const { return nodes_[id].leaf; }
  const char* op(int id) const { return nodes_[id].op; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    const char* op = "";
    Tensor<T> value;
    std::vector<Var<T>> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool leaf = false;
  };

  Var<T> Push(Node node);

  // deque: references to node values stay valid while recording.
  std::deque<Node> nodes_;
  bool recording_ = true;
  std::vector<char> relevant_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

// Elementwise, equal shapes.
template <typename T>
Var<T> Add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> Sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> Mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> Scale(const Var<T>& a, T factor);
template <typename T>
Var<T> Pow(const Var<T>& a, T exponent);
template <typename T>
Var<T> Relu(const Var<T>& a);

template <typename T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) {
  return Add(a, b);
}
template <typename T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) {
  return Sub(a, b);
}
template <typename T>
Var<T> operator*(const Var<T>& a, const Var<T>& b) {
  return Mul(a, b);
}

// Reductions and their adjoint broadcasts.
template <typename T>
Var<T> Sum(const Var<T>& a);
template <typename T>
Var<T> BroadcastScalar(const Var<T>& s, const Shape& shape);
// [N, C, ...] -> [C]
template <typename T>
Var<T> ChannelSum(const Var<T>& a);
// [C] -> [N, C, ...]
template <typename T>
Var<T> BroadcastChannel(const Var<T>& v, const Shape& shape);
// [N, K] -> [N]
template <typename T>
Var<T> RowSum(const Var<T>& a);
// [N] -> [N, K]
template <typename T>
Var<T> BroadcastRows(const Var<T>& v, std::size_t cols);

template <typename T>
Var<T> Reshape(const Var<T>& a, const Shape& shape);
template <typename T>
Var<T> Transpose(const Var<T>& a);
// [m, k] x [k, n] -> [m, n]
template <typename T>
Var<T> MatMul(const Var<T>& a, const Var<T>& b);

// Stride-1 2-D convolution (cross-correlation) with symmetric zero padding.
// x: [N, C, H, W], kernel: [O, C, KH, KW] -> [N, O, H + 2p - KH + 1, ...].
template <typename T>
Var<T> Conv2d(const Var<T>& x, const Var<T>& kernel, std::size_t pad);
// Adjoint of Conv2d with respect to x.
template <typename T>
Var<T> Conv2dInputGrad(const Var<T>& grad, const Var<T>& kernel,
                       std::size_t pad, const Shape& input_shape);
// Adjoint of Conv2d with respect to the kernel.
template <typename T>
Var<T> Conv2dWeightGrad(const Var<T>& x, const Var<T>& grad, std::size_t pad,
                        const Shape& kernel_shape);

// 2x2 average pooling with stride 2; odd trailing rows/columns are dropped.
template <typename T>
Var<T> AvgPool2(const Var<T>& x);
template <typename T>
Var<T> AvgPool2Adjoint(const Var<T>& grad, const Shape& input_shape);

// Row-wise over [N, K].
template <typename T>
Var<T> Softmax(const Var<T>& logits);
template <typename T>
Var<T> LogSoftmax(const Var<T>& logits);

// Mean over rows of sum_k target[n,k] * (logsumexp(logits[n]) - logits[n,k]).
// Targets may be one-hot constants or differentiable soft labels.
template <typename T>
Var<T> SoftmaxCrossEntropy(const Var<T>& logits, const Var<T>& targets);

}  // namespace fedmask::ad

#endif  // FEDMASK_AUTODIFF_H_
