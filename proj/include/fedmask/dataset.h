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
#ifndef FEDMASK_DATASET_H_
#define FEDMASK_DATASET_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fedmask/tensor.h"

namespace fedmask {

// Labelled images, N x C x H x W with pixels in [0, 1].
struct Dataset {
  std::string name;
  Tensor<double> images;
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
  // [C, H, W]
  Shape image_shape() const { return {channels(), height(), width()}; }

  // [1, C, H, W]
  Tensor<double> Image(std::size_t index) const;
  // [indices.size(), C, H, W]
  Tensor<double> Gather(std::span<const std::size_t> indices) const;
  Dataset Subset(std::span<const std::size_t> indices) const;
  // First `n` samples (or all, if fewer).
  Dataset Head(std::size_t n) const;

  // Throws DataError on label/pixel range or length violations.
  void Validate() const;
};

// One client's slice of a dataset. All sample access goes through it, so an
// optional observer can log exactly which global indices were read.
class DataShard {
 public:
  using Observer = std::function<void(std::size_t global_index)>;

  DataShard(const Dataset& data, std::vector<std::size_t> indices,
            Observer observer = nullptr)
      : data_(&data), indices_(std::move(indices)), observer_(std::move(observer)) {}

  std::size_t size() const { return indices_.size(); }
  bool empty() const { return indices_.empty(); }
  std::size_t num_classes() const { return data_->num_classes; }
  Shape image_shape() const { return data_->image_shape(); }
  const std::vector<std::size_t>& indices() const { return indices_; }

  // Images and labels for shard-local positions.
  Tensor<double> Images(std::span<const std::size_t> positions) const;
  std::vector<int> Labels(std::span<const std::size_t> positions) const;

 private:
  void Touch(std::size_t global) const {
    if (observer_) observer_(global);
  }

  const Dataset* data_;
  std::vector<std::size_t> indices_;
  Observer observer_;
};

// Big-endian IDX files (magic 2051 for images, 2049 for labels).
Dataset LoadMnist(const std::filesystem::path& images_path,
                  const std::filesystem::path& labels_path);

// CIFAR-10 binary batches: 3073-byte records (label byte, then R, G, B
// 32x32 planes).
Dataset LoadCifar10(std::span<const std::filesystem::path> batch_paths);

// Bilinear resize with corner-aligned sampling; [N, C, H, W] -> [N, C, h, w].
Tensor<double> ResizeBilinear(const Tensor<double>& images, std::size_t height,
                              std::size_t width);

// Class-conditioned oriented gratings plus a class-placed blob, with
// per-sample phase, jitter and noise. Samples cycle through the classes, so
// n == classes yields one sample per class.
Dataset SynthDataset(std::size_t n, std::size_t classes, const Shape& image_shape,
                     std::uint64_t seed);

// round(v * 255) for v already in [0, 1].
std::uint8_t ToByte(double v);

}  // namespace fedmask

#endif  // FEDMASK_DATASET_H_
