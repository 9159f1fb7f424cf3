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
#ifndef FEDMASK_ERROR_H_
#define FEDMASK_ERROR_H_

#include <stdexcept>
#include <string>

namespace fedmask {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes or bundle layouts that do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Out-of-range hyperparameters, malformed configs, bad arguments.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated input files.
class DataError : public Error {
 public:
  using Error::Error;
};

// A NaN reached a place that requires dense values.
class NanError : public Error {
 public:
  using Error::Error;
};

// Label extraction found no usable final-layer row.
class LabelInferenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace fedmask

#endif  // FEDMASK_ERROR_H_
