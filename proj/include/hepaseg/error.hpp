// Copyright 2026 The hepaseg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef HEPASEG_ERROR_HPP
#define HEPASEG_ERROR_HPP

#include <stdexcept>
#include <string>

namespace hepaseg {

/// Bad arguments or configuration supplied by the caller.
class UsageError : public std::invalid_argument {
 public:
  explicit UsageError(const std::string& what) : std::invalid_argument(what) {}
};

/// Input data that is unreadable, malformed or inconsistent (I/O, headers,
/// shape mismatches, empty masks where a metric needs content).
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// A computation produced non-finite values (diverging training, etc).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace hepaseg

#endif  // HEPASEG_ERROR_HPP
