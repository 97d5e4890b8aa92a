// Copyright (c) 2026 the reggan authors.
// Distributed under the Apache License, Version 2.0; see the LICENSE file.

#pragma once

#include <stdexcept>
#include <string>

namespace reggan {

// File could not be opened / read / written.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File exists but its contents are not a valid instance of the format.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Operands have incompatible shapes.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A numerical quantity that must stay finite did not.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace reggan
