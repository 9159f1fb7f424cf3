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

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <utility>

#include "fedmask/error.h"

namespace fedmask {

std::string ShapeToString(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace ad {
namespace {

[[noreturn]] void ShapeFail(const char* op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

template <typename T>
void RequireSameShape(const char* op, const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) {
    ShapeFail(op, "shape mismatch " + ShapeToString(a.shape()) + " vs " +
                      ShapeToString(b.shape()));
  }
}

template <typename T>
void RequireRank(const char* op, const Var<T>& a, std::size_t rank) {
  if (a.shape().size() != rank) {
    ShapeFail(op, "expected rank " + std::to_string(rank) + ", got " +
                      ShapeToString(a.shape()));
  }
}

template <typename T>
void RequireSameTape(const char* op, const Var<T>& a, const Var<T>& b) {
  if (&a.tape() != &b.tape()) ShapeFail(op, "operands live on different tapes");
}

// Trailing extent of a [N, C, ...] tensor: product of dims after the channel.
std::size_t SpatialSize(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t i = 2; i < s.size(); ++i) n *= s[i];
  return n;
}

struct ConvDims {
  std::size_t n, c, h, w, o, kh, kw, pad, ho, wo;
};

ConvDims MakeConvDims(const char* op, const Shape& x, const Shape& k,
                      std::size_t pad) {
  if (x.size() != 4 || k.size() != 4) {
    ShapeFail(op, "expected rank-4 input and kernel, got " + ShapeToString(x) +
                      " and " + ShapeToString(k));
  }
  if (x[1] != k[1]) {
    ShapeFail(op, "input channels " + std::to_string(x[1]) +
                      " do not match kernel " + ShapeToString(k));
  }
  if (x[2] + 2 * pad < k[2] || x[3] + 2 * pad < k[3]) {
    ShapeFail(op, "kernel " + ShapeToString(k) + " larger than padded input " +
                      ShapeToString(x));
  }
  ConvDims d{x[0], x[1], x[2], x[3], k[0], k[2], k[3], pad, 0, 0};
  d.ho = d.h + 2 * pad - d.kh + 1;
  d.wo = d.w + 2 * pad - d.kw + 1;
  return d;
}

// The three convolution kernels are partial derivatives of one trilinear
// form sum y[n,o,i,j] * x[n,c,i+a-p,j+b-p] * k[o,c,a,b]. They share the
// same loop nest and valid-range arithmetic.
template <typename T>
void ConvForwardKernel(const ConvDims& d, const T* x, const T* k, T* y) {
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t o = 0; o < d.o; ++o) {
      T* yo = y + (n * d.o + o) * d.ho * d.wo;
      for (std::size_t c = 0; c < d.c; ++c) {
        const T* xc = x + (n * d.c + c) * d.h * d.w;
        const T* kk = k + (o * d.c + c) * d.kh * d.kw;
        for (std::size_t a = 0; a < d.kh; ++a) {
          const std::size_t i0 = a < d.pad ? d.pad - a : 0;
          const std::size_t i1 = std::min(d.ho, d.h + d.pad - a);
          for (std::size_t b = 0; b < d.kw; ++b) {
            const std::size_t j0 = b < d.pad ? d.pad - b : 0;
            const std::size_t j1 = std::min(d.wo, d.w + d.pad - b);
            const T wgt = kk[a * d.kw + b];
            for (std::size_t i = i0; i < i1; ++i) {
              const T* xr = xc + (i + a - d.pad) * d.w + b - d.pad;
              T* yr = yo + i * d.wo;
              for (std::size_t j = j0; j < j1; ++j) yr[j] += wgt * xr[j];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void ConvInputGradKernel(const ConvDims& d, const T* g, const T* k, T* dx) {
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t o = 0; o < d.o; ++o) {
      const T* go = g + (n * d.o + o) * d.ho * d.wo;
      for (std::size_t c = 0; c < d.c; ++c) {
        T* dxc = dx + (n * d.c + c) * d.h * d.w;
        const T* kk = k + (o * d.c + c) * d.kh * d.kw;
        for (std::size_t a = 0; a < d.kh; ++a) {
          const std::size_t i0 = a < d.pad ? d.pad - a : 0;
          const std::size_t i1 = std::min(d.ho, d.h + d.pad - a);
          for (std::size_t b = 0; b < d.kw; ++b) {
            const std::size_t j0 = b < d.pad ? d.pad - b : 0;
            const std::size_t j1 = std::min(d.wo, d.w + d.pad - b);
            const T wgt = kk[a * d.kw + b];
            for (std::size_t i = i0; i < i1; ++i) {
              T* xr = dxc + (i + a - d.pad) * d.w + b - d.pad;
              const T* gr = go + i * d.wo;
              for (std::size_t j = j0; j < j1; ++j) xr[j] += wgt * gr[j];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void ConvWeightGradKernel(const ConvDims& d, const T* x, const T* g, T* dk) {
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t o = 0; o < d.o; ++o) {
      const T* go = g + (n * d.o + o) * d.ho * d.wo;
      for (std::size_t c = 0; c < d.c; ++c) {
        const T* xc = x + (n * d.c + c) * d.h * d.w;
        T* kk = dk + (o * d.c + c) * d.kh * d.kw;
        for (std::size_t a = 0; a < d.kh; ++a) {
          const std::size_t i0 = a < d.pad ? d.pad - a : 0;
          const std::size_t i1 = std::min(d.ho, d.h + d.pad - a);
          for (std::size_t b = 0; b < d.kw; ++b) {
            const std::size_t j0 = b < d.pad ? d.pad - b : 0;
            const std::size_t j1 = std::min(d.wo, d.w + d.pad - b);
            T acc = 0;
            for (std::size_t i = i0; i < i1; ++i) {
              const T* xr = xc + (i + a - d.pad) * d.w + b - d.pad;
              const T* gr = go + i * d.wo;
              for (std::size_t j = j0; j < j1; ++j) acc += gr[j] * xr[j];
            }
            kk[a * d.kw + b] += acc;
          }
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Tape

template <typename T>
Var<T> Tape<T>::Push(Node node) {
  nodes_.push_back(std::move(node));
  return Var<T>(this, static_cast<int>(nodes_.size() - 1));
}

template <typename T>
Var<T> Tape<T>::Leaf(Tensor<T> value) {
  Node node;
  node.op = "leaf";
  node.value = std::move(value);
  node.requires_grad = true;
  node.leaf = true;
  return Push(std::move(node));
}

template <typename T>
Var<T> Tape<T>::Constant(Tensor<T> value) {
  Node node;
  node.op = "constant";
  node.value = std::move(value);
  node.leaf = true;
  return Push(std::move(node));
}

template <typename T>
Var<T> Tape<T>::Record(const char* op, Tensor<T> value,
                       std::vector<Var<T>> inputs, BackwardFn backward) {
  Node node;
  node.op = op;
  node.value = std::move(value);
  bool any = false;
  for (const auto& in : inputs) {
    if (&in.tape() != this) ShapeFail(op, "operand from a different tape");
    any = any || in.requires_grad();
  }
  if (recording_ && any) {
    node.requires_grad = true;
    node.inputs = std::move(inputs);
    node.backward = std::move(backward);
  }
  return Push(std::move(node));
}

template <typename T>
bool Tape<T>::NeedsGrad(const Var<T>& v) const {
  const auto id = static_cast<std::size_t>(v.id());
  return id < relevant_.size() && relevant_[id] != 0;
}

template <typename T>
std::vector<Var<T>> Tape<T>::Gradient(const Var<T>& root,
                                      std::span<const Var<T>> wrt,
                                      bool create_graph) {
  if (!root.valid() || &root.tape() != this) {
    throw InvalidArgument("Gradient: root is not on this tape");
  }
  if (!root.shape().empty()) {
    throw InvalidArgument("Gradient: root must be a scalar, got shape " +
                          ShapeToString(root.shape()));
  }
  for (const auto& w : wrt) {
    if (!w.valid() || &w.tape() != this ||
        static_cast<std::size_t>(w.id()) >= nodes_.size()) {
      throw InvalidArgument("Gradient: requested variable is not in the graph");
    }
    if (!nodes_[w.id()].leaf) {
      throw InvalidArgument("Gradient: requested variable is not a leaf (" +
                            std::string(nodes_[w.id()].op) + ")");
    }
  }

  const int root_id = root.id();
  // Mark nodes lying on a path from a requested leaf to the root.
  relevant_.assign(root_id + 1, 0);
  for (const auto& w : wrt) {
    if (w.id() <= root_id && nodes_[w.id()].requires_grad) relevant_[w.id()] = 1;
  }
  for (int id = 0; id <= root_id; ++id) {
    const Node& node = nodes_[id];
    if (!node.requires_grad || node.leaf) continue;
    for (const auto& in : node.inputs) {
      if (relevant_[in.id()]) {
        relevant_[id] = 1;
        break;
      }
    }
  }

  const bool saved_recording = recording_;
  recording_ = create_graph;
  std::vector<Var<T>> grads(root_id + 1);
  try {
    if (relevant_[root_id]) {
      grads[root_id] = Constant(Tensor<T>::Scalar(T{1}));
    }
    for (int id = root_id; id >= 0; --id) {
      if (!grads[id].valid() || !relevant_[id] || nodes_[id].leaf) continue;
      // Copy: the backward call appends to nodes_.
      const BackwardFn backward = nodes_[id].backward;
      const std::vector<Var<T>> inputs = nodes_[id].inputs;
      std::vector<Var<T>> in_grads = backward(Var<T>(this, id), grads[id]);
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        const int in_id = inputs[k].id();
        if (k >= in_grads.size() || !in_grads[k].valid() || !relevant_[in_id]) {
          continue;
        }
        if (grads[in_id].valid()) {
          grads[in_id] = Add(grads[in_id], in_grads[k]);
        } else {
          grads[in_id] = in_grads[k];
        }
      }
      grads[id] = Var<T>();  // release
    }
  } catch (...) {
    recording_ = saved_recording;
    relevant_.clear();
    throw;
  }
  recording_ = saved_recording;
  relevant_.clear();

  std::vector<Var<T>> out;
  out.reserve(wrt.size());
  for (const auto& w : wrt) {
    if (w.id() <= root_id && grads[w.id()].valid()) {
      out.push_back(grads[w.id()]);
    } else {
      out.push_back(Constant(Tensor<T>(w.shape())));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var<T> Add(const Var<T>& a, const Var<T>& b) {
  RequireSameTape("add", a, b);
  RequireSameShape("add", a, b);
  Tensor<T> out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return a.tape().Record("add", std::move(out), {a, b},
                         [](const Var<T>&, const Var<T>& g) {
                           return std::vector<Var<T>>{g, g};
                         });
}

template <typename T>
Var<T> Sub(const Var<T>& a, const Var<T>& b) {
  RequireSameTape("sub", a, b);
  RequireSameShape("sub", a, b);
  Tensor<T> out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return a.tape().Record("sub", std::move(out), {a, b},
                         [b](const Var<T>&, const Var<T>& g) {
                           Var<T> gb;
                           if (b.tape().NeedsGrad(b)) gb = Scale(g, T{-1});
                           return std::vector<Var<T>>{g, gb};
                         });
}

template <typename T>
Var<T> Mul(const Var<T>& a, const Var<T>& b) {
  RequireSameTape("mul", a, b);
  RequireSameShape("mul", a, b);
  Tensor<T> out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return a.tape().Record("mul", std::move(out), {a, b},
                         [a, b](const Var<T>&, const Var<T>& g) {
                           Tape<T>& t = a.tape();
                           Var<T> ga, gb;
                           if (t.NeedsGrad(a)) ga = Mul(g, b);
                           if (t.NeedsGrad(b)) gb = Mul(g, a);
                           return std::vector<Var<T>>{ga, gb};
                         });
}

template <typename T>
Var<T> Scale(const Var<T>& a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= factor;
  return a.tape().Record("scale", std::move(out), {a},
                         [factor](const Var<T>&, const Var<T>& g) {
                           return std::vector<Var<T>>{Scale(g, factor)};
                         });
}

template <typename T>
Var<T> Pow(const Var<T>& a, T exponent) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = std::pow(v, exponent);
  return a.tape().Record(
      "pow", std::move(out), {a}, [a, exponent](const Var<T>&, const Var<T>& g) {
        return std::vector<Var<T>>{
            Mul(g, Scale(Pow(a, exponent - T{1}), exponent))};
      });
}

template <typename T>
Var<T> Relu(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = v > T{0} ? v : T{0};
  return a.tape().Record("relu", std::move(out), {a},
                         [a](const Var<T>&, const Var<T>& g) {
                           // The step mask is piecewise constant in a, so its
                           // derivative is zero almost everywhere.
                           Tensor<T> step(a.shape());
                           auto av = a.value().data();
                           auto s = step.data();
                           for (std::size_t i = 0; i < s.size(); ++i) {
                             s[i] = av[i] > T{0} ? T{1} : T{0};
                           }
                           return std::vector<Var<T>>{
                               Mul(g, a.tape().Constant(std::move(step)))};
                         });
}

// ---------------------------------------------------------------------------
// Reductions and broadcasts

template <typename T>
Var<T> Sum(const Var<T>& a) {
  T acc = 0;
  for (T v : a.value().data()) acc += v;
  const Shape shape = a.shape();
  return a.tape().Record("sum", Tensor<T>::Scalar(acc), {a},
                         [shape](const Var<T>&, const Var<T>& g) {
                           return std::vector<Var<T>>{BroadcastScalar(g, shape)};
                         });
}

template <typename T>
Var<T> BroadcastScalar(const Var<T>& s, const Shape& shape) {
  if (s.value().size() != 1) {
    ShapeFail("broadcast_scalar", "expected one element, got " +
                                      ShapeToString(s.shape()));
  }
  Tensor<T> out(shape, s.value()[0]);
  return s.tape().Record("broadcast_scalar", std::move(out), {s},
                         [s](const Var<T>&, const Var<T>& g) {
                           Var<T> total = Sum(g);
                           if (!s.shape().empty()) total = Reshape(total, s.shape());
                           return std::vector<Var<T>>{total};
                         });
}

template <typename T>
Var<T> ChannelSum(const Var<T>& a) {
  const Shape& s = a.shape();
  if (s.size() < 2) ShapeFail("channel_sum", "expected rank >= 2, got " + ShapeToString(s));
  const std::size_t n = s[0], c = s[1], inner = SpatialSize(s);
  Tensor<T> out(Shape{c});
  auto av = a.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* p = av.data() + (i * c + ch) * inner;
      T acc = 0;
      for (std::size_t k = 0; k < inner; ++k) acc += p[k];
      o[ch] += acc;
    }
  }
  const Shape shape = s;
  return a.tape().Record("channel_sum", std::move(out), {a},
                         [shape](const Var<T>&, const Var<T>& g) {
                           return std::vector<Var<T>>{BroadcastChannel(g, shape)};
                         });
}

template <typename T>
Var<T> BroadcastChannel(const Var<T>& v, const Shape& shape) {
  if (v.shape().size() != 1 || shape.size() < 2 || shape[1] != v.shape()[0]) {
    ShapeFail("broadcast_channel", "cannot broadcast " + ShapeToString(v.shape()) +
                                       " to " + ShapeToString(shape));
  }
  const std::size_t n = shape[0], c = shape[1], inner = SpatialSize(shape);
  Tensor<T> out(shape);
  auto vv = v.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::fill_n(o.data() + (i * c + ch) * inner, inner, vv[ch]);
    }
  }
  return v.tape().Record("broadcast_channel", std::move(out), {v},
                         [](const Var<T>&, const Var<T>& g) {
                           return std::vector<Var<T>>{ChannelSum(g)};
                         });
}

template <typename T>
Var<T> RowSum(const Var<T>& a) {
  RequireRank("row_sum", a, 2);
  const std::size_t n = a.shape()[0], k = a.shape()[1];
  Tensor<T> out(Shape{n});
  auto av = a.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    T acc = 0;
    for (std::size_t j = 0; j < k; ++j) acc += av[i * k + j];
    out[i] = acc;
  }
  return a.tape().Record("row_sum", std::move(out), {a},
                         [k](const Var<T>&, const Var<T>& g) {
                           return std::vector<Var<T>>{BroadcastRows(g, k)};
                         });
}

template <typename T>
Var<T> BroadcastRows(const Var<T>& v, std::size_t cols) {
  RequireRank("broadcast_rows", v, 1);
  const std::size_t n = v.shape()[0];
  Tensor<T> out(Shape{n, cols});
  auto vv = v.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    std::fill_n(out.data().data() + i * cols, cols, vv[i]);
  }
  return v.tape().Record("broadcast_rows", std::move(out), {v},
                         [](const Var<T>&, const Var<T>& g) {
                           return std::vector<Var<T>>{RowSum(g)};
                         });
}

template <typename T>
Var<T> Reshape(const Var<T>& a, const Shape& shape) {
  if (NumElements(shape) != a.value().size()) {
    ShapeFail("reshape", "cannot reshape " + ShapeToString(a.shape()) + " to " +
                             ShapeToString(shape));
  }
  const Shape original = a.shape();
  return a.tape().Record("reshape", a.value().Reshaped(shape), {a},
                         [original](const Var<T>&, const Var<T>& g) {
                           return std::vector<Var<T>>{Reshape(g, original)};
                         });
}

template <typename T>
Var<T> Transpose(const Var<T>& a) {
  RequireRank("transpose", a, 2);
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Tensor<T> out(Shape{n, m});
  auto av = a.value().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  }
  return a.tape().Record("transpose", std::move(out), {a},
                         [](const Var<T>&, const Var<T>& g) {
                           return std::vector<Var<T>>{Transpose(g)};
                         });
}

template <typename T>
Var<T> MatMul(const Var<T>& a, const Var<T>& b) {
  RequireSameTape("matmul", a, b);
  RequireRank("matmul", a, 2);
  RequireRank("matmul", b, 2);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    ShapeFail("matmul", "inner dimensions differ: " + ShapeToString(a.shape()) +
                            " x " + ShapeToString(b.shape()));
  }
  Tensor<T> out(Shape{m, n});
  auto av = a.value().data();
  auto bv = b.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    T* orow = o.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = av[i * k + p];
      const T* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  return a.tape().Record("matmul", std::move(out), {a, b},
                         [a, b](const Var<T>&, const Var<T>& g) {
                           Tape<T>& t = a.tape();
                           Var<T> ga, gb;
                           if (t.NeedsGrad(a)) ga = MatMul(g, Transpose(b));
                           if (t.NeedsGrad(b)) gb = MatMul(Transpose(a), g);
                           return std::vector<Var<T>>{ga, gb};
                         });
}

// ---------------------------------------------------------------------------
// Convolution

template <typename T>
Var<T> Conv2d(const Var<T>& x, const Var<T>& kernel, std::size_t pad) {
  RequireSameTape("conv2d", x, kernel);
  const ConvDims d = MakeConvDims("conv2d", x.shape(), kernel.shape(), pad);
  Tensor<T> out(Shape{d.n, d.o, d.ho, d.wo});
  ConvForwardKernel(d, x.value().data().data(), kernel.value().data().data(),
                    out.data().data());
  return x.tape().Record(
      "conv2d", std::move(out), {x, kernel},
      [x, kernel, pad](const Var<T>&, const Var<T>& g) {
        Tape<T>& t = x.tape();
        Var<T> gx, gk;
        if (t.NeedsGrad(x)) gx = Conv2dInputGrad(g, kernel, pad, x.shape());
        if (t.NeedsGrad(kernel)) gk = Conv2dWeightGrad(x, g, pad, kernel.shape());
        return std::vector<Var<T>>{gx, gk};
      });
}

template <typename T>
Var<T> Conv2dInputGrad(const Var<T>& grad, const Var<T>& kernel,
                       std::size_t pad, const Shape& input_shape) {
  RequireSameTape("conv2d_input_grad", grad, kernel);
  const ConvDims d =
      MakeConvDims("conv2d_input_grad", input_shape, kernel.shape(), pad);
  if (grad.shape() != Shape{d.n, d.o, d.ho, d.wo}) {
    ShapeFail("conv2d_input_grad", "gradient shape " + ShapeToString(grad.shape()) +
                                       " does not match conv output");
  }
  Tensor<T> out(input_shape);
  ConvInputGradKernel(d, grad.value().data().data(),
                      kernel.value().data().data(), out.data().data());
  return grad.tape().Record(
      "conv2d_input_grad", std::move(out), {grad, kernel},
      [grad, kernel, pad](const Var<T>&, const Var<T>& u) {
        Tape<T>& t = grad.tape();
        Var<T> gg, gk;
        if (t.NeedsGrad(grad)) gg = Conv2d(u, kernel, pad);
        if (t.NeedsGrad(kernel)) gk = Conv2dWeightGrad(u, grad, pad, kernel.shape());
        return std::vector<Var<T>>{gg, gk};
      });
}

template <typename T>
Var<T> Conv2dWeightGrad(const Var<T>& x, const Var<T>& grad, std::size_t pad,
                        const Shape& kernel_shape) {
  RequireSameTape("conv2d_weight_grad", x, grad);
  const ConvDims d =
      MakeConvDims("conv2d_weight_grad", x.shape(), kernel_shape, pad);
  if (grad.shape() != Shape{d.n, d.o, d.ho, d.wo}) {
    ShapeFail("conv2d_weight_grad", "gradient shape " +
                                        ShapeToString(grad.shape()) +
                                        " does not match conv output");
  }
  Tensor<T> out(kernel_shape);
  ConvWeightGradKernel(d, x.value().data().data(), grad.value().data().data(),
                       out.data().data());
  return x.tape().Record(
      "conv2d_weight_grad", std::move(out), {x, grad},
      [x, grad, pad](const Var<T>&, const Var<T>& u) {
        Tape<T>& t = x.tape();
        Var<T> gx, gg;
        if (t.NeedsGrad(x)) gx = Conv2dInputGrad(grad, u, pad, x.shape());
        if (t.NeedsGrad(grad)) gg = Conv2d(x, u, pad);
        return std::vector<Var<T>>{gx, gg};
      });
}

// ---------------------------------------------------------------------------
// Pooling

template <typename T>
Var<T> AvgPool2(const Var<T>& x) {
  RequireRank("avg_pool2", x, 4);
  const Shape& s = x.shape();
  const std::size_t n = s[0], c = s[1], h = s[2], w = s[3];
  const std::size_t ho = h / 2, wo = w / 2;
  if (ho == 0 || wo == 0) ShapeFail("avg_pool2", "input too small: " + ShapeToString(s));
  Tensor<T> out(Shape{n, c, ho, wo});
  auto xv = x.value().data();
  auto o = out.data();
  for (std::size_t p = 0; p < n * c; ++p) {
    const T* xp = xv.data() + p * h * w;
    T* op = o.data() + p * ho * wo;
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        op[i * wo + j] = T(0.25) * (xp[2 * i * w + 2 * j] + xp[2 * i * w + 2 * j + 1] +
                                    xp[(2 * i + 1) * w + 2 * j] +
                                    xp[(2 * i + 1) * w + 2 * j + 1]);
      }
    }
  }
  const Shape in_shape = s;
  return x.tape().Record("avg_pool2", std::move(out), {x},
                         [in_shape](const Var<T>&, const Var<T>& g) {
                           return std::vector<Var<T>>{AvgPool2Adjoint(g, in_shape)};
                         });
}

template <typename T>
Var<T> AvgPool2Adjoint(const Var<T>& grad, const Shape& input_shape) {
  RequireRank("avg_pool2_adjoint", grad, 4);
  const std::size_t n = input_shape[0], c = input_shape[1], h = input_shape[2],
                    w = input_shape[3];
  const std::size_t ho = h / 2, wo = w / 2;
  if (grad.shape() != Shape{n, c, ho, wo}) {
    ShapeFail("avg_pool2_adjoint", "gradient shape " + ShapeToString(grad.shape()) +
                                       " does not match pooled " +
                                       ShapeToString(input_shape));
  }
  Tensor<T> out(input_shape);
  auto gv = grad.value().data();
  auto o = out.data();
  for (std::size_t p = 0; p < n * c; ++p) {
    const T* gp = gv.data() + p * ho * wo;
    T* op = o.data() + p * h * w;
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        const T v = T(0.25) * gp[i * wo + j];
        op[2 * i * w + 2 * j] = v;
        op[2 * i * w + 2 * j + 1] = v;
        op[(2 * i + 1) * w + 2 * j] = v;
        op[(2 * i + 1) * w + 2 * j + 1] = v;
      }
    }
  }
  return grad.tape().Record("avg_pool2_adjoint", std::move(out), {grad},
                            [](const Var<T>&, const Var<T>& u) {
                              return std::vector<Var<T>>{AvgPool2(u)};
                            });
}

// ---------------------------------------------------------------------------
// Softmax family

namespace {

// Row-wise log-sum-exp with max subtraction.
template <typename T>
std::vector<T> RowLogSumExp(const Tensor<T>& z) {
  const std::size_t n = z.dim(0), k = z.dim(1);
  std::vector<T> lse(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = z.data().data() + i * k;
    const T m = *std::max_element(row, row + k);
    T acc = 0;
    for (std::size_t j = 0; j < k; ++j) acc += std::exp(row[j] - m);
    lse[i] = m + std::log(acc);
  }
  return lse;
}

}  // namespace

template <typename T>
Var<T> Softmax(const Var<T>& logits) {
  RequireRank("softmax", logits, 2);
  const std::size_t n = logits.shape()[0], k = logits.shape()[1];
  const auto lse = RowLogSumExp(logits.value());
  Tensor<T> out(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      out[i * k + j] = std::exp(logits.value()[i * k + j] - lse[i]);
    }
  }
  return logits.tape().Record(
      "softmax", std::move(out), {logits}, [k](const Var<T>& s, const Var<T>& u) {
        // s * (u - rowsum(u * s))
        Var<T> inner = BroadcastRows(RowSum(Mul(u, s)), k);
        return std::vector<Var<T>>{Mul(s, Sub(u, inner))};
      });
}

template <typename T>
Var<T> LogSoftmax(const Var<T>& logits) {
  RequireRank("log_softmax", logits, 2);
  const std::size_t n = logits.shape()[0], k = logits.shape()[1];
  const auto lse = RowLogSumExp(logits.value());
  Tensor<T> out(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      out[i * k + j] = logits.value()[i * k + j] - lse[i];
    }
  }
  return logits.tape().Record(
      "log_softmax", std::move(out), {logits},
      [logits, k](const Var<T>&, const Var<T>& u) {
        Var<T> total = BroadcastRows(RowSum(u), k);
        return std::vector<Var<T>>{Sub(u, Mul(Softmax(logits), total))};
      });
}

template <typename T>
Var<T> SoftmaxCrossEntropy(const Var<T>& logits, const Var<T>& targets) {
  RequireSameTape("softmax_cross_entropy", logits, targets);
  RequireRank("softmax_cross_entropy", logits, 2);
  RequireSameShape("softmax_cross_entropy", logits, targets);
  const std::size_t n = logits.shape()[0], k = logits.shape()[1];
  if (n == 0) ShapeFail("softmax_cross_entropy", "empty batch");
  const auto lse = RowLogSumExp(logits.value());
  auto z = logits.value().data();
  auto t = targets.value().data();
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      acc += t[i * k + j] * (lse[i] - z[i * k + j]);
    }
  }
  const T inv_n = T{1} / static_cast<T>(n);
  return logits.tape().Record(
      "softmax_cross_entropy", Tensor<T>::Scalar(acc * inv_n), {logits, targets},
      [logits, targets, k, inv_n](const Var<T>&, const Var<T>& g) {
        Tape<T>& tp = logits.tape();
        Var<T> scale = BroadcastScalar(Scale(g, inv_n), logits.shape());
        Var<T> gz, gt;
        if (tp.NeedsGrad(logits)) {
          // softmax(z) * rowsum(t) - t
          Var<T> mass = BroadcastRows(RowSum(targets), k);
          gz = Mul(Sub(Mul(Softmax(logits), mass), targets), scale);
        }
        if (tp.NeedsGrad(targets)) {
          gt = Mul(Scale(LogSoftmax(logits), T{-1}), scale);
        }
        return std::vector<Var<T>>{gz, gt};
      });
}

// ---------------------------------------------------------------------------
// Instantiations

#define FEDMASK_INSTANTIATE_AUTODIFF(T)                                        \
  template class Tape<T>;                                                      \
  template Var<T> Add(const Var<T>&, const Var<T>&);                           \
  template Var<T> Sub(const Var<T>&, const Var<T>&);                           \
  template Var<T> Mul(const Var<T>&, const Var<T>&);                           \
  template Var<T> Scale(const Var<T>&, T);                                     \
  template Var<T> Pow(const Var<T>&, T);                                       \
  template Var<T> Relu(const Var<T>&);                                         \
  template Var<T> Sum(const Var<T>&);                                          \
  template Var<T> BroadcastScalar(const Var<T>&, const Shape&);                \
  template Var<T> ChannelSum(const Var<T>&);                                   \
  template Var<T> BroadcastChannel(const Var<T>&, const Shape&);               \
  template Var<T> RowSum(const Var<T>&);                                       \
  template Var<T> BroadcastRows(const Var<T>&, std::size_t);                   \
  template Var<T> Reshape(const Var<T>&, const Shape&);                        \
  template Var<T> Transpose(const Var<T>&);                                    \
  template Var<T> MatMul(const Var<T>&, const Var<T>&);                        \
  template Var<T> Conv2d(const Var<T>&, const Var<T>&, std::size_t);           \
  template Var<T> Conv2dInputGrad(const Var<T>&, const Var<T>&, std::size_t,   \
                                  const Shape&);                               \
  template Var<T> Conv2dWeightGrad(const Var<T>&, const Var<T>&, std::size_t,  \
                                   const Shape&);                              \
  template Var<T> AvgPool2(const Var<T>&);                                     \
  template Var<T> AvgPool2Adjoint(const Var<T>&, const Shape&);                \
  template Var<T> Softmax(const Var<T>&);                                      \
  template Var<T> LogSoftmax(const Var<T>&);                                   \
  template Var<T> SoftmaxCrossEntropy(const Var<T>&, const Var<T>&);

FEDMASK_INSTANTIATE_AUTODIFF(float)
FEDMASK_INSTANTIATE_AUTODIFF(double)

#undef FEDMASK_INSTANTIATE_AUTODIFF

}  // namespace ad
}  // namespace fedmask
