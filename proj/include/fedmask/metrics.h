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
#ifndef FEDMASK_METRICS_H_
#define FEDMASK_METRICS_H_

#include <vector>

#include "fedmask/tensor.h"

namespace fedmask {

// Images here are [C, H, W] tensors holding 0-255 intensities.

struct SsimConfig {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 255.0;
};

// Mean of the local SSIM map ('valid' Gaussian filtering), averaged over
// channels. Throws ShapeError on mismatched shapes, InvalidArgument when an
// image is smaller than the window.
double Ssim(const Tensor<double>& a, const Tensor<double>& b, const SsimConfig& cfg = {});

enum class BrightnessMode {
  kWrap,   // (v + offset) mod 256
  kClamp,  // min(v + offset, 255)
};

// Model-space image to 0-255: round(clamp(v, 0, 1) * 255). Same bytes as the
// written PGM/PPM, so the sweep scores exactly what an eavesdropper would save.
// Wrap-around only enters through the brightness offset.
Tensor<double> Quantize(const Tensor<double>& image);

// 0-255 image plus a non-negative offset, wrapped or saturated.
Tensor<double> ShiftBrightness(const Tensor<double>& image, int offset, BrightnessMode mode);

// Mean squared difference.
double Mse(const Tensor<double>& a, const Tensor<double>& b);

struct SweepConfig {
  int max_offset = 200;
  int step = 10;
  BrightnessMode mode = BrightnessMode::kWrap;
  SsimConfig ssim;
};

struct LeakageReport {
  double mse = 0.0;                   // model-space reconstruction vs original
  std::vector<double> ssim_by_offset;  // offsets 0, step, ..., max_offset
  double max_adjusted_ssim = 0.0;
  int argmax_offset = 0;  // smallest offset attaining the maximum
};

// SSIM(shift(leaked, offset), original) for every offset. Both in 0-255.
LeakageReport BrightnessSweep(const Tensor<double>& leaked, const Tensor<double>& original,
                              const SweepConfig& cfg = {});

// Quantizes both model-space images, sweeps, and fills in
// the model-space MSE.
LeakageReport EvaluateLeakage(const Tensor<double>& reconstruction,
                              const Tensor<double>& original, const SweepConfig& cfg = {});

}  // namespace fedmask

#endif  // FEDMASK_METRICS_H_
