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
#include "fedmask/parameter_bundle.h"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "fedmask/error.h"

namespace fedmask {
namespace {

constexpr std::array<char, 4> kMagic = {'F', 'M', 'P', 'B'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kFlagExempt = 0x1;
constexpr std::uint8_t kFlagBuffer = 0x2;

static_assert(std::endian::native == std::endian::little,
              "bundle I/O assumes a little-endian host");

template <typename U>
void Put(std::ostream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U Get(std::istream& in, const char* what) {
  U v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(U))) {
    throw DataError(std::string("bundle truncated while reading ") + what);
  }
  return v;
}

}  // namespace

void ParameterBundle::Add(std::string name, Tensor<double> tensor, ParamTag tag,
                          bool trainable) {
  if (Find(name) != nullptr) {
    throw InvalidArgument("duplicate parameter name: " + name);
  }
  entries_.push_back({std::move(name), std::move(tensor), tag, trainable});
}

const ParameterEntry* ParameterBundle::Find(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

std::size_t ParameterBundle::total_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

std::size_t ParameterBundle::mask_exempt_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.tag == ParamTag::kMaskExempt) n += e.tensor.size();
  }
  return n;
}

double ParameterBundle::mask_exempt_fraction() const {
  const std::size_t total = total_count();
  return total == 0 ? 0.0
                    : static_cast<double>(mask_exempt_count()) /
                          static_cast<double>(total);
}

std::vector<double> ParameterBundle::Flatten() const {
  std::vector<double> flat;
  flat.reserve(total_count());
  for (const auto& e : entries_) {
    flat.insert(flat.end(), e.tensor.data().begin(), e.tensor.data().end());
  }
  return flat;
}

ParameterBundle ParameterBundle::Unflatten(std::span<const double> values) const {
  if (values.size() != total_count()) {
    throw ShapeError("unflatten: got " + std::to_string(values.size()) +
                     " values for a bundle of " + std::to_string(total_count()));
  }
  ParameterBundle out = *this;
  std::size_t offset = 0;
  for (auto& e : out.entries_) {
    auto dst = e.tensor.data();
    std::copy_n(values.begin() + offset, dst.size(), dst.begin());
    offset += dst.size();
  }
  return out;
}

bool ParameterBundle::SameLayout(const ParameterBundle& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.tensor.shape() != b.tensor.shape() ||
        a.tag != b.tag || a.trainable != b.trainable) {
      return false;
    }
  }
  return true;
}

void ParameterBundle::RequireSameLayout(const ParameterBundle& other,
                                        std::string_view context) const {
  if (entries_.size() != other.entries_.size()) {
    throw ShapeError(std::string(context) + ": bundle has " +
                     std::to_string(other.entries_.size()) +
                     " entries, expected " + std::to_string(entries_.size()));
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.tensor.shape() != b.tensor.shape() ||
        a.tag != b.tag) {
      throw ShapeError(std::string(context) + ": entry " + std::to_string(i) +
                       " is '" + b.name + "' " + ShapeToString(b.tensor.shape()) +
                       ", expected '" + a.name + "' " +
                       ShapeToString(a.tensor.shape()));
    }
  }
}

bool ParameterBundle::HasNan() const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [](const ParameterEntry& e) { return e.tensor.HasNan(); });
}

std::size_t ParameterBundle::NanCount() const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    for (double v : e.tensor.data()) n += std::isnan(v) ? 1 : 0;
  }
  return n;
}

ParameterBundle ParameterBundle::ZerosLike() const {
  ParameterBundle out = *this;
  for (auto& e : out.entries_) {
    std::fill(e.tensor.data().begin(), e.tensor.data().end(), 0.0);
  }
  return out;
}

bool BitwiseEqual(const ParameterBundle& a, const ParameterBundle& b) {
  if (!a.SameLayout(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!BitwiseEqual(a.entry(i).tensor, b.entry(i).tensor)) return false;
  }
  return true;
}

void WriteBundle(std::ostream& out, const ParameterBundle& bundle) {
  out.write(kMagic.data(), kMagic.size());
  Put<std::uint32_t>(out, kVersion);
  Put<std::uint32_t>(out, static_cast<std::uint32_t>(bundle.size()));
  for (const auto& e : bundle.entries()) {
    Put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    std::uint8_t flags = 0;
    if (e.tag == ParamTag::kMaskExempt) flags |= kFlagExempt;
    if (!e.trainable) flags |= kFlagBuffer;
    Put<std::uint8_t>(out, flags);
    Put<std::uint32_t>(out, static_cast<std::uint32_t>(e.tensor.rank()));
    for (std::size_t d : e.tensor.shape()) Put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(e.tensor.data().data()),
              static_cast<std::streamsize>(e.tensor.size() * sizeof(double)));
  }
  if (!out) throw DataError("failed writing bundle");
}

ParameterBundle ReadBundle(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw DataError("bundle: bad magic");
  }
  const auto version = Get<std::uint32_t>(in, "version");
  if (version != kVersion) {
    throw DataError("bundle: unsupported version " + std::to_string(version));
  }
  const auto count = Get<std::uint32_t>(in, "entry count");
  ParameterBundle bundle;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = Get<std::uint32_t>(in, "name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw DataError("bundle truncated in name");
    const auto flags = Get<std::uint8_t>(in, "flags");
    const auto rank = Get<std::uint32_t>(in, "rank");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(Get<std::uint64_t>(in, "extent"));
    std::vector<double> values(NumElements(shape));
    if (!in.read(reinterpret_cast<char*>(values.data()),
                 static_cast<std::streamsize>(values.size() * sizeof(double)))) {
      throw DataError("bundle truncated in values of '" + name + "'");
    }
    bundle.Add(std::move(name), Tensor<double>(std::move(shape), std::move(values)),
               (flags & kFlagExempt) ? ParamTag::kMaskExempt : ParamTag::kMaskable,
               (flags & kFlagBuffer) == 0);
  }
  return bundle;
}

void SaveBundle(const std::filesystem::path& path, const ParameterBundle& bundle) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  WriteBundle(out, bundle);
}

ParameterBundle LoadBundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return ReadBundle(in);
}

}  // namespace fedmask
