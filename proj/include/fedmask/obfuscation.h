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
#ifndef FEDMASK_OBFUSCATION_H_
#define FEDMASK_OBFUSCATION_H_

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedmask/parameter_bundle.h"

namespace fedmask {

enum class ObfuscationMethod { kNone, kMask, kNoise, kClip, kPrune };

std::string_view MethodName(ObfuscationMethod method);
// Accepts "none", "mask", "noise", "clip", "prune".
ObfuscationMethod ParseMethod(std::string_view name);

// Random stream coordinates. Mask and noise draws are counter-based on
// (seed, round, client, flat parameter index).
struct StreamKey {
  std::uint64_t seed = 0;
  std::uint64_t round = 0;
  std::uint64_t client = 0;
};

struct ObfuscationSpec {
  ObfuscationMethod method = ObfuscationMethod::kNone;
  double p = 0.0;
  StreamKey key;
  // Test hook. false masks every entry, BatchNorm included.
  bool respect_exemption = true;

  // Throws InvalidArgument when p is outside the method's range.
  void Validate() const;
};

// Each maskable scalar becomes NaN independently with probability p.
// Requires 0 <= p < 1 and a dense bundle.
ParameterBundle Mask(const ParameterBundle& bundle, double p, const StreamKey& key,
                     bool respect_exemption = true);

// Adds N(0, sigma^2) to every trainable scalar.
ParameterBundle Noise(const ParameterBundle& bundle, double sigma, const StreamKey& key);

// p-quantile of |values| with linear interpolation between closest ranks,
// at 0-based rank position p (n + 1) - 1 clamped to [0, n - 1]. p = 0 gives
// the minimum; any p >= n / (n + 1) gives the maximum.
double AbsPercentile(std::span<const double> values, double p);

// Per-entry thresholds T_l = AbsPercentile(entry, p). Entries the
// percentile transforms leave alone (buffers) get NaN.
std::vector<double> LayerThresholds(const ParameterBundle& bundle, double p);

// |v| > T becomes sign(v) T, per entry.
ParameterBundle Clip(const ParameterBundle& bundle, double p);
ParameterBundle ClipWithThresholds(const ParameterBundle& bundle,
                                   std::span<const double> thresholds);

// |v| < T becomes 0, per entry.
ParameterBundle Prune(const ParameterBundle& bundle, double p);
ParameterBundle PruneWithThresholds(const ParameterBundle& bundle,
                                    std::span<const double> thresholds);

ParameterBundle Obfuscate(const ParameterBundle& bundle, const ObfuscationSpec& spec);

}  // namespace fedmask

#endif  // FEDMASK_OBFUSCATION_H_
