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
#include "fedmask/dataset.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>

#include "fedmask/error.h"
#include "fedmask/rng.h"

namespace fedmask {
namespace {

std::vector<std::uint8_t> ReadAll(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

std::uint32_t BigEndian32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

}  // namespace

std::uint8_t ToByte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

Tensor<double> Dataset::Image(std::size_t index) const {
  const std::size_t idx[] = {index};
  return Gather(idx);
}

Tensor<double> Dataset::Gather(std::span<const std::size_t> indices) const {
  const std::size_t per = channels() * height() * width();
  Tensor<double> out(Shape{indices.size(), channels(), height(), width()});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) {
      throw InvalidArgument("sample index " + std::to_string(indices[i]) +
                            " out of range for dataset of " + std::to_string(size()));
    }
    std::copy_n(images.data().begin() + indices[i] * per, per,
                out.data().begin() + i * per);
  }
  return out;
}

Dataset Dataset::Subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.name = name;
  out.num_classes = num_classes;
  out.images = Gather(indices);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) out.labels.push_back(labels[i]);
  return out;
}

Dataset Dataset::Head(std::size_t n) const {
  std::vector<std::size_t> idx(std::min(n, size()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return Subset(idx);
}

void Dataset::Validate() const {
  if (images.rank() != 4) throw DataError(name + ": images must be rank 4");
  if (images.dim(0) != labels.size()) {
    throw DataError(name + ": " + std::to_string(images.dim(0)) + " images but " +
                    std::to_string(labels.size()) + " labels");
  }
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= num_classes) {
      throw DataError(name + ": label " + std::to_string(label) + " out of range");
    }
  }
  for (double v : images.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw DataError(name + ": pixel outside [0, 1]");
  }
}

Tensor<double> DataShard::Images(std::span<const std::size_t> positions) const {
  std::vector<std::size_t> global(positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    global[i] = indices_.at(positions[i]);
    Touch(global[i]);
  }
  return data_->Gather(global);
}

std::vector<int> DataShard::Labels(std::span<const std::size_t> positions) const {
  std::vector<int> out(positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const std::size_t g = indices_.at(positions[i]);
    Touch(g);
    out[i] = data_->labels[g];
  }
  return out;
}

Dataset LoadMnist(const std::filesystem::path& images_path,
                  const std::filesystem::path& labels_path) {
  const auto img = ReadAll(images_path);
  const auto lab = ReadAll(labels_path);
  if (img.size() < 16) throw DataError(images_path.string() + ": truncated header");
  if (lab.size() < 8) throw DataError(labels_path.string() + ": truncated header");
  if (const auto magic = BigEndian32(img, 0); magic != 2051) {
    throw DataError(images_path.string() + ": bad magic " + std::to_string(magic) +
                    " (expected 2051)");
  }
  if (const auto magic = BigEndian32(lab, 0); magic != 2049) {
    throw DataError(labels_path.string() + ": bad magic " + std::to_string(magic) +
                    " (expected 2049)");
  }
  const std::size_t n = BigEndian32(img, 4);
  const std::size_t rows = BigEndian32(img, 8);
  const std::size_t cols = BigEndian32(img, 12);
  const std::size_t n_labels = BigEndian32(lab, 4);
  if (n != n_labels) {
    throw DataError("MNIST count mismatch: " + std::to_string(n) + " images vs " +
                    std::to_string(n_labels) + " labels");
  }
  if (img.size() < 16 + n * rows * cols) {
    throw DataError(images_path.string() + ": truncated pixel data");
  }
  if (lab.size() < 8 + n) throw DataError(labels_path.string() + ": truncated labels");

  Dataset ds;
  ds.name = "mnist";
  ds.num_classes = 10;
  ds.images = Tensor<double>(Shape{n, 1, rows, cols});
  auto px = ds.images.data();
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = img[16 + i] / 255.0;
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (lab[8 + i] > 9) throw DataError("MNIST label out of range");
    ds.labels[i] = lab[8 + i];
  }
  return ds;
}

Dataset LoadCifar10(std::span<const std::filesystem::path> batch_paths) {
  constexpr std::size_t kPixels = 3 * 32 * 32;
  constexpr std::size_t kRecord = 1 + kPixels;
  std::vector<double> pixels;
  std::vector<int> labels;
  for (const auto& path : batch_paths) {
    const auto bytes = ReadAll(path);
    if (bytes.empty() || bytes.size() % kRecord != 0) {
      throw DataError(path.string() + ": size " + std::to_string(bytes.size()) +
                      " is not a positive multiple of 3073");
    }
    for (std::size_t r = 0; r < bytes.size() / kRecord; ++r) {
      const std::uint8_t* rec = bytes.data() + r * kRecord;
      if (rec[0] > 9) throw DataError(path.string() + ": label out of range");
      labels.push_back(rec[0]);
      for (std::size_t k = 0; k < kPixels; ++k) pixels.push_back(rec[1 + k] / 255.0);
    }
  }
  if (labels.empty()) throw DataError("no CIFAR-10 records loaded");
  Dataset ds;
  ds.name = "cifar10";
  ds.num_classes = 10;
  ds.images = Tensor<double>(Shape{labels.size(), 3, 32, 32}, std::move(pixels));
  ds.labels = std::move(labels);
  return ds;
}

Tensor<double> ResizeBilinear(const Tensor<double>& images, std::size_t height,
                              std::size_t width) {
  if (images.rank() != 4) throw ShapeError("resize: expected [N, C, H, W]");
  if (height == 0 || width == 0) throw InvalidArgument("resize: empty target");
  const std::size_t n = images.dim(0), c = images.dim(1), h = images.dim(2),
                    w = images.dim(3);
  Tensor<double> out(Shape{n, c, height, width});
  auto coord = [](std::size_t i, std::size_t in, std::size_t outn) {
    return outn == 1 ? 0.0 : static_cast<double>(i) * (in - 1) / (outn - 1);
  };
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = images.data().data() + p * h * w;
    double* dst = out.data().data() + p * height * width;
    for (std::size_t i = 0; i < height; ++i) {
      const double y = coord(i, h, height);
      const std::size_t y0 = static_cast<std::size_t>(std::floor(y));
      const std::size_t y1 = std::min(y0 + 1, h - 1);
      const double fy = y - y0;
      for (std::size_t j = 0; j < width; ++j) {
        const double x = coord(j, w, width);
        const std::size_t x0 = static_cast<std::size_t>(std::floor(x));
        const std::size_t x1 = std::min(x0 + 1, w - 1);
        const double fx = x - x0;
        const double top = src[y0 * w + x0] * (1 - fx) + src[y0 * w + x1] * fx;
        const double bot = src[y1 * w + x0] * (1 - fx) + src[y1 * w + x1] * fx;
        dst[i * width + j] = std::clamp(top * (1 - fy) + bot * fy, 0.0, 1.0);
      }
    }
  }
  return out;
}

Dataset SynthDataset(std::size_t n, std::size_t classes, const Shape& image_shape,
                     std::uint64_t seed) {
  if (classes < 2) throw InvalidArgument("synth: need at least 2 classes");
  if (n < classes) throw InvalidArgument("synth: n must be >= classes");
  if (image_shape.size() != 3) throw InvalidArgument("synth: shape must be [C, H, W]");
  const std::size_t c = image_shape[0], h = image_shape[1], w = image_shape[2];
  constexpr double kPi = std::numbers::pi;

  Dataset ds;
  ds.name = "synth";
  ds.num_classes = classes;
  ds.images = Tensor<double>(Shape{n, c, h, w});
  ds.labels.resize(n);
  Rng rng = MakeRng(DeriveSeed(seed, {0x5e7}));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.04);

  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t k = s % classes;
    ds.labels[s] = static_cast<int>(k);
    const double angle = kPi * k / classes + 0.15 * (unit(rng) - 0.5);
    const double freq = 2.0 + 1.5 * (k % 3) + 0.3 * (unit(rng) - 0.5);
    const double phase = 2 * kPi * unit(rng);
    // Blob centre on a ring, one slot per class.
    const double slot = 2 * kPi * k / classes;
    const double cy = 0.5 + 0.28 * std::sin(slot) + 0.05 * (unit(rng) - 0.5);
    const double cx = 0.5 + 0.28 * std::cos(slot) + 0.05 * (unit(rng) - 0.5);
    const double radius = 0.12 + 0.03 * unit(rng);
    for (std::size_t ch = 0; ch < c; ++ch) {
      // Per-class tint so colour carries some signal on RGB shapes.
      const double tint = 0.6 + 0.4 * std::cos(slot + 2 * kPi * ch / std::max<std::size_t>(c, 1));
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          const double y = (i + 0.5) / h, x = (j + 0.5) / w;
          const double u = x * std::cos(angle) + y * std::sin(angle);
          const double grating = 0.5 + 0.5 * std::sin(2 * kPi * freq * u + phase);
          const double d2 = ((y - cy) * (y - cy) + (x - cx) * (x - cx)) / (radius * radius);
          const double blob = std::exp(-0.5 * d2);
          const double v = 0.15 + 0.45 * grating * tint + 0.5 * blob + noise(rng);
          ds.images[((s * c + ch) * h + i) * w + j] = std::clamp(v, 0.0, 1.0);
        }
      }
    }
  }
  return ds;
}

}  // namespace fedmask
