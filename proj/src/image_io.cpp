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
#include "fedmask/image_io.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "fedmask/error.h"
#include "fedmask/metrics.h"

namespace fedmask {

void WritePixmap(const std::filesystem::path& path, const Tensor<double>& image255) {
  if (image255.rank() != 3 || (image255.dim(0) != 1 && image255.dim(0) != 3)) {
    throw ShapeError("pixmap: expected [1|3, H, W], got " + ShapeToString(image255.shape()));
  }
  const std::size_t c = image255.dim(0), h = image255.dim(1), w = image255.dim(2);
  std::vector<char> bytes(c * h * w);
  // Planar tensor to interleaved pixels.
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < h * w; ++i) {
      const double v = image255[ch * h * w + i];
      if (!std::isfinite(v)) throw NanError("pixmap: non-finite pixel");
      bytes[i * c + ch] = static_cast<char>(
          static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0)));
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << (c == 1 ? "P5" : "P6") << "\n" << w << " " << h << "\n255\n";
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

void WriteModelImage(const std::filesystem::path& path, const Tensor<double>& image) {
  WritePixmap(path, Quantize(image));
}

Tensor<double> ReadPixmap(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  in.get();
  if ((magic != "P5" && magic != "P6") || maxval != 255 || w == 0 || h == 0) {
    throw DataError(path.string() + ": unsupported pixmap header");
  }
  const std::size_t c = magic == "P5" ? 1 : 3;
  std::vector<char> bytes(c * h * w);
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw DataError(path.string() + ": truncated pixel data");
  }
  Tensor<double> out(Shape{c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < h * w; ++i) {
      out[ch * h * w + i] = static_cast<std::uint8_t>(bytes[i * c + ch]);
    }
  }
  return out;
}

}  // namespace fedmask
