#!/usr/bin/env python3
# Copyright 2026 The fedmask Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Builds the MNIST subset in data/mnist/ as IDX files.

The source is the `mnist` npm package (10,000 MNIST digits stored as JSON,
one file per class, pixels already scaled to [0, 1] with three decimals).
Pixels are mapped back to bytes with round(v * 255).

    npm pack mnist && tar xzf mnist-1.1.0.tgz
    python3 tools/make_mnist_subset.py package/src/digits data/mnist
"""

import argparse
import json
import pathlib
import struct


def write_idx_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(bytes(labels))


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("digits_dir", type=pathlib.Path)
    parser.add_argument("out_dir", type=pathlib.Path)
    parser.add_argument("--train-per-class", type=int, default=200)
    parser.add_argument("--test-per-class", type=int, default=100)
    args = parser.parse_args()

    per_class = []
    for digit in range(10):
        data = json.loads((args.digits_dir / f"{digit}.json").read_text())["data"]
        n = len(data) // 784
        samples = [
            [int(round(v * 255)) for v in data[i * 784:(i + 1) * 784]]
            for i in range(n)
        ]
        need = args.train_per_class + args.test_per_class
        if n < need:
            raise SystemExit(f"digit {digit}: only {n} samples, need {need}")
        per_class.append(samples)

    # Interleave classes so any prefix of the files is roughly balanced.
    train_x, train_y, test_x, test_y = [], [], [], []
    for i in range(args.train_per_class):
        for digit in range(10):
            train_x.append(per_class[digit][i])
            train_y.append(digit)
    for i in range(args.test_per_class):
        for digit in range(10):
            test_x.append(per_class[digit][args.train_per_class + i])
            test_y.append(digit)

    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_idx_images(args.out_dir / "train-images-idx3-ubyte", train_x)
    write_idx_labels(args.out_dir / "train-labels-idx1-ubyte", train_y)
    write_idx_images(args.out_dir / "t10k-images-idx3-ubyte", test_x)
    write_idx_labels(args.out_dir / "t10k-labels-idx1-ubyte", test_y)


if __name__ == "__main__":
    main()
