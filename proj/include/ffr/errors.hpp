// Copyright 2026 The FFR Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef FFR_ERRORS_HPP
#define FFR_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace ffr {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A configuration value is out of range or inconsistent.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An API was called in a state that does not allow it.
class UsageError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Input bytes do not follow the expected file format.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A loss or tensor became NaN/Inf during training.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A prune plan or pruned model is internally inconsistent.
class StructuralError : public Error {
 public:
  using Error::Error;
};

}  // namespace ffr

#endif  // FFR_ERRORS_HPP
