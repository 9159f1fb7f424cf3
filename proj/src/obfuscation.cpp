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
#include "fedmask/obfuscation.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "fedmask/error.h"
#include "fedmask/rng.h"

namespace fedmask {
namespace {

constexpr std::uint64_t kMaskStream = 0x6d61736b;
constexpr std::uint64_t kNoiseStream = 0x6e6f6973;

void RequireDense(const ParameterBundle& bundle, std::string_view op) {
  if (bundle.HasNan()) {
    throw NanError(std::string(op) + ": input bundle contains NaN");
  }
}

void RequireFraction(double p, std::string_view op) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw InvalidArgument(std::string(op) + ": p must be in [0, 1), got " +
                          std::to_string(p));
  }
}

std::uint64_t StreamSeed(const StreamKey& key, std::uint64_t purpose) {
  return DeriveSeed(key.seed, {purpose, key.round, key.client});
}

void RequireThresholds(const ParameterBundle& bundle, std::span<const double> t) {
  if (t.size() != bundle.size()) {
    throw ShapeError("thresholds: " + std::to_string(t.size()) + " values for " +
                     std::to_string(bundle.size()) + " entries");
  }
}

}  // namespace

std::string_view MethodName(ObfuscationMethod method) {
  switch (method) {
    case ObfuscationMethod::kNone: return "none";
    case ObfuscationMethod::kMask: return "mask";
    case ObfuscationMethod::kNoise: return "noise";
    case ObfuscationMethod::kClip: return "clip";
    case ObfuscationMethod::kPrune: return "prune";
  }
  return "unknown";
}

ObfuscationMethod ParseMethod(std::string_view name) {
  for (auto m : {ObfuscationMethod::kNone, ObfuscationMethod::kMask,
                 ObfuscationMethod::kNoise, ObfuscationMethod::kClip,
                 ObfuscationMethod::kPrune}) {
    if (MethodName(m) == name) return m;
  }
  throw InvalidArgument("unknown obfuscation method '" + std::string(name) + "'");
}

void ObfuscationSpec::Validate() const {
  switch (method) {
    case ObfuscationMethod::kNone:
      return;
    case ObfuscationMethod::kNoise:
      if (!(p >= 0.0) || std::isinf(p)) {
        throw InvalidArgument("noise: sigma must be >= 0, got " + std::to_string(p));
      }
      return;
    default:
      RequireFraction(p, MethodName(method));
  }
}

ParameterBundle Mask(const ParameterBundle& bundle, double p, const StreamKey& key,
                     bool respect_exemption) {
  RequireFraction(p, "mask");
  RequireDense(bundle, "mask");
  ParameterBundle out = bundle;
  if (p == 0.0) return out;
  const std::uint64_t stream = StreamSeed(key, kMaskStream);
  std::uint64_t index = 0;
  for (auto& e : out.entries()) {
    const bool skip = respect_exemption && e.tag == ParamTag::kMaskExempt;
    for (auto& v : e.tensor.data()) {
      if (!skip && CounterUniform(stream, index) < p) {
        v = std::numeric_limits<double>::quiet_NaN();
      }
      ++index;
    }
  }
  return out;
}

ParameterBundle Noise(const ParameterBundle& bundle, double sigma, const StreamKey& key) {
  if (!(sigma >= 0.0) || std::isinf(sigma)) {
    throw InvalidArgument("noise: sigma must be >= 0, got " + std::to_string(sigma));
  }
  RequireDense(bundle, "noise");
  ParameterBundle out = bundle;
  if (sigma == 0.0) return out;
  const std::uint64_t stream = StreamSeed(key, kNoiseStream);
  std::uint64_t index = 0;
  for (auto& e : out.entries()) {
    for (auto& v : e.tensor.data()) {
      if (e.trainable) {
        // Box-Muller on two counter draws; 1 - u1 lies in (0, 1].
        const double u1 = CounterUniform(stream, 2 * index);
        const double u2 = CounterUniform(stream, 2 * index + 1);
        const double z = std::sqrt(-2.0 * std::log1p(-u1)) *
                         std::cos(2.0 * std::numbers::pi * u2);
        v += sigma * z;
      }
      ++index;
    }
  }
  return out;
}

double AbsPercentile(std::span<const double> values, double p) {
  if (values.empty()) throw InvalidArgument("percentile of an empty layer");
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("percentile: p outside [0, 1]");
  std::vector<double> a(values.size());
  std::transform(values.begin(), values.end(), a.begin(),
                 [](double v) { return std::abs(v); });
  std::sort(a.begin(), a.end());
  // Rank position p (n + 1) - 1 (0-based), clamped to the sample range.
  const double last = static_cast<double>(a.size() - 1);
  const double pos = std::clamp(p * static_cast<double>(a.size() + 1) - 1.0, 0.0, last);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, a.size() - 1);
  return a[lo] + (pos - static_cast<double>(lo)) * (a[hi] - a[lo]);
}

std::vector<double> LayerThresholds(const ParameterBundle& bundle, double p) {
  std::vector<double> t(bundle.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < bundle.size(); ++i) {
    const auto& e = bundle.entry(i);
    if (e.trainable) t[i] = AbsPercentile(e.tensor.data(), p);
  }
  return t;
}

ParameterBundle ClipWithThresholds(const ParameterBundle& bundle,
                                   std::span<const double> thresholds) {
  RequireThresholds(bundle, thresholds);
  RequireDense(bundle, "clip");
  ParameterBundle out = bundle;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double t = thresholds[i];
    if (std::isnan(t)) continue;
    for (auto& v : out.entry(i).tensor.data()) {
      if (std::abs(v) > t) v = std::copysign(t, v);
    }
  }
  return out;
}

ParameterBundle Clip(const ParameterBundle& bundle, double p) {
  RequireFraction(p, "clip");
  RequireDense(bundle, "clip");
  return ClipWithThresholds(bundle, LayerThresholds(bundle, p));
}

ParameterBundle PruneWithThresholds(const ParameterBundle& bundle,
                                    std::span<const double> thresholds) {
  RequireThresholds(bundle, thresholds);
  RequireDense(bundle, "prune");
  ParameterBundle out = bundle;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double t = thresholds[i];
    if (std::isnan(t)) continue;
    for (auto& v : out.entry(i).tensor.data()) {
      if (std::abs(v) < t) v = 0.0;
    }
  }
  return out;
}

ParameterBundle Prune(const ParameterBundle& bundle, double p) {
  RequireFraction(p, "prune");
  RequireDense(bundle, "prune");
  return PruneWithThresholds(bundle, LayerThresholds(bundle, p));
}

ParameterBundle Obfuscate(const ParameterBundle& bundle, const ObfuscationSpec& spec) {
  switch (spec.method) {
    case ObfuscationMethod::kNone: return bundle;
    case ObfuscationMethod::kMask:
      return Mask(bundle, spec.p, spec.key, spec.respect_exemption);
    case ObfuscationMethod::kNoise: return Noise(bundle, spec.p, spec.key);
    case ObfuscationMethod::kClip: return Clip(bundle, spec.p);
    case ObfuscationMethod::kPrune: return Prune(bundle, spec.p);
  }
  throw InvalidArgument("unknown obfuscation method");
}

}  // namespace fedmask
