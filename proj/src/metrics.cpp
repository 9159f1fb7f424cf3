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
#include "fedmask/metrics.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedmask/error.h"

namespace fedmask {
namespace {

std::vector<double> GaussianWindow(int size, double sigma) {
  std::vector<double> w(size);
  const double c = (size - 1) / 2.0;
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    w[i] = std::exp(-((i - c) * (i - c)) / (2 * sigma * sigma));
    total += w[i];
  }
  for (auto& v : w) v /= total;
  return w;
}

// Separable 'valid' filtering of one H x W plane.
std::vector<double> Filter(const double* plane, int h, int w, const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int oh = h - n + 1, ow = w - n + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += k[i] * plane[y * w + x + i];
      rows[y * ow + x] = acc;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow, 0.0);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += k[i] * rows[(y + i) * ow + x];
      out[y * ow + x] = acc;
    }
  }
  return out;
}

void RequireSameShape(const Tensor<double>& a, const Tensor<double>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + ShapeToString(a.shape()) + " and " +
                     ShapeToString(b.shape()) + " differ");
  }
}

}  // namespace

double Ssim(const Tensor<double>& a, const Tensor<double>& b, const SsimConfig& cfg) {
  RequireSameShape(a, b, "ssim");
  if (a.rank() != 3) throw ShapeError("ssim: expected [C, H, W], got " + ShapeToString(a.shape()));
  const int c = static_cast<int>(a.dim(0));
  const int h = static_cast<int>(a.dim(1)), w = static_cast<int>(a.dim(2));
  if (h < cfg.window || w < cfg.window) {
    throw InvalidArgument("ssim: image " + ShapeToString(a.shape()) +
                          " smaller than the window");
  }
  const auto k = GaussianWindow(cfg.window, cfg.sigma);
  const double c1 = std::pow(cfg.k1 * cfg.dynamic_range, 2);
  const double c2 = std::pow(cfg.k2 * cfg.dynamic_range, 2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;

  double total = 0.0;
  std::vector<double> aa(plane), bb(plane), ab(plane);
  for (int ch = 0; ch < c; ++ch) {
    const double* pa = a.data().data() + ch * plane;
    const double* pb = b.data().data() + ch * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      aa[i] = pa[i] * pa[i];
      bb[i] = pb[i] * pb[i];
      ab[i] = pa[i] * pb[i];
    }
    const auto mu_a = Filter(pa, h, w, k), mu_b = Filter(pb, h, w, k);
    const auto e_aa = Filter(aa.data(), h, w, k), e_bb = Filter(bb.data(), h, w, k);
    const auto e_ab = Filter(ab.data(), h, w, k);
    double sum = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
      const double ma = mu_a[i], mb = mu_b[i];
      const double va = e_aa[i] - ma * ma, vb = e_bb[i] - mb * mb;
      const double cov = e_ab[i] - ma * mb;
      sum += ((2 * ma * mb + c1) * (2 * cov + c2)) /
             ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total += sum / static_cast<double>(mu_a.size());
  }
  return total / c;
}

Tensor<double> Quantize(const Tensor<double>& image) {
  Tensor<double> out = image;
  for (auto& v : out.data()) {
    if (!std::isfinite(v)) throw NanError("quantize: non-finite pixel");
    v = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
  }
  return out;
}

double Mse(const Tensor<double>& a, const Tensor<double>& b) {
  RequireSameShape(a, b, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

Tensor<double> ShiftBrightness(const Tensor<double>& image, int offset, BrightnessMode mode) {
  if (offset < 0) throw InvalidArgument("brightness offset must be non-negative");
  Tensor<double> out = image;
  for (auto& v : out.data()) {
    v = mode == BrightnessMode::kWrap ? std::fmod(v + offset, 256.0) : std::min(v + offset, 255.0);
  }
  return out;
}

LeakageReport BrightnessSweep(const Tensor<double>& leaked, const Tensor<double>& original,
                              const SweepConfig& cfg) {
  RequireSameShape(leaked, original, "brightness sweep");
  if (cfg.step <= 0 || cfg.max_offset < 0) {
    throw InvalidArgument("brightness sweep: bad offset grid");
  }
  LeakageReport report;
  for (int offset = 0; offset <= cfg.max_offset; offset += cfg.step) {
    const double s = Ssim(ShiftBrightness(leaked, offset, cfg.mode), original, cfg.ssim);
    if (report.ssim_by_offset.empty() || s > report.max_adjusted_ssim) {
      report.max_adjusted_ssim = s;
      report.argmax_offset = offset;
    }
    report.ssim_by_offset.push_back(s);
  }
  return report;
}

LeakageReport EvaluateLeakage(const Tensor<double>& reconstruction,
                              const Tensor<double>& original, const SweepConfig& cfg) {
  LeakageReport report = BrightnessSweep(Quantize(reconstruction), Quantize(original), cfg);
  report.mse = Mse(reconstruction, original);
  return report;
}

}  // namespace fedmask
