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
#ifndef FEDMASK_RNG_H_
#define FEDMASK_RNG_H_

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedmask {

// SplitMix64 finalizer. Bijective on 64-bit words.
constexpr std::uint64_t Mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent stream key from a base seed and any number of
// coordinates (round, client, purpose tag, ...).
inline std::uint64_t DeriveSeed(std::uint64_t seed,
                                std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = Mix64(seed);
  for (std::uint64_t p : parts) h = Mix64(h ^ Mix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

// Counter-based uniform in [0, 1): the value depends only on (key, index),
// so per-element decisions are reproducible regardless of traversal order.
inline double CounterUniform(std::uint64_t key, std::uint64_t index) {
  const std::uint64_t bits = Mix64(key ^ Mix64(index));
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

using Rng = std::mt19937_64;

inline Rng MakeRng(std::uint64_t seed) { return Rng(seed); }

}  // namespace fedmask

#endif  // FEDMASK_RNG_H_
