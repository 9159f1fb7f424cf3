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
#ifndef FEDMASK_IMAGE_IO_H_
#define FEDMASK_IMAGE_IO_H_

#include <cstdint>
#include <filesystem>
#include <vector>

#include "fedmask/tensor.h"

namespace fedmask {

// Binary PGM (1 channel) or PPM (3 channels), 8-bit, from a [C, H, W]
// tensor of 0-255 intensities. Values are rounded and clamped to a byte.
void WritePixmap(const std::filesystem::path& path, const Tensor<double>& image255);

// Same, from a model-space image: byte = round(clamp(v, 0, 1) * 255).
void WriteModelImage(const std::filesystem::path& path, const Tensor<double>& image);

// Reads a binary P5/P6 file (maxval 255) back as a [C, H, W] 0-255 tensor.
Tensor<double> ReadPixmap(const std::filesystem::path& path);

}  // namespace fedmask

#endif  // FEDMASK_IMAGE_IO_H_
