// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace tetra {

/// Malformed, truncated or inconsistent input data (files, dimensions).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A computation produced a non-finite value (e.g. a diverging loss).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tetra
