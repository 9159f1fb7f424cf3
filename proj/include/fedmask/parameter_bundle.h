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
#ifndef FEDMASK_PARAMETER_BUNDLE_H_
#define FEDMASK_PARAMETER_BUNDLE_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedmask/tensor.h"

namespace fedmask {

// Whether masking may touch an entry. BatchNorm entries are exempt: a NaN in
// a scale, shift or running statistic corrupts normalization of the whole
// channel.
enum class ParamTag : std::uint8_t { kMaskable = 0, kMaskExempt = 1 };

struct ParameterEntry {
  std::string name;
  Tensor<double> tensor;
  ParamTag tag = ParamTag::kMaskable;
  // False for running statistics: updated by training, never by gradients.
  bool trainable = true;
};

// Ordered, named view of all model state. Every bundle produced for one
// model architecture has the same names, shapes and order, so bundles can be
// combined position by position.
class ParameterBundle {
 public:
  ParameterBundle() = default;

  void Add(std::string name, Tensor<double> tensor, ParamTag tag,
           bool trainable = true);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  ParameterEntry& entry(std::size_t i) { return entries_.at(i); }
  const ParameterEntry& entry(std::size_t i) const { return entries_.at(i); }
  std::span<ParameterEntry> entries() { return entries_; }
  std::span<const ParameterEntry> entries() const { return entries_; }

  // nullptr when absent.
  const ParameterEntry* Find(std::string_view name) const;

  // Total scalar count across entries.
  std::size_t total_count() const;
  std::size_t mask_exempt_count() const;
  double mask_exempt_fraction() const;

  std::vector<double> Flatten() const;
  // Inverse of Flatten for a bundle with this layout.
  ParameterBundle Unflatten(std::span<const double> values) const;

  // Same names, shapes, tags and order.
  bool SameLayout(const ParameterBundle& other) const;
  // Throws ShapeError naming the first differing entry.
  void RequireSameLayout(const ParameterBundle& other,
                         std::string_view context) const;

  bool HasNan() const;
  std::size_t NanCount() const;
  ParameterBundle ZerosLike() const;

 private:
  std::vector<ParameterEntry> entries_;
};

// Bit-level equality (NaN payloads compare equal to themselves).
bool BitwiseEqual(const ParameterBundle& a, const ParameterBundle& b);

// Binary format, all integers little-endian:
//   magic "FMPB" | u32 version (1) | u32 entry count
//   per entry: u32 name length | name bytes | u8 flags (bit0 mask-exempt,
//              bit1 non-trainable) | u32 rank | u64 extents[rank] |
//              f64 values[product(extents)]
// NaN values are written verbatim.
void WriteBundle(std::ostream& out, const ParameterBundle& bundle);
ParameterBundle ReadBundle(std::istream& in);
void SaveBundle(const std::filesystem::path& path, const ParameterBundle& bundle);
ParameterBundle LoadBundle(const std::filesystem::path& path);

}  // namespace fedmask

#endif  // FEDMASK_PARAMETER_BUNDLE_H_
