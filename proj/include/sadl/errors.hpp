#pragma once

#include <stdexcept>
#include <string>

namespace sadl {

// Base class for all recoverable errors raised by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor/array dimensions do not line up for the requested operation.
struct ShapeError : Error {
  using Error::Error;
};

// Invalid or inconsistent run configuration (unknown key, bad value, ...).
struct ConfigError : Error {
  using Error::Error;
};

// File could not be read, written, or parsed.
struct IoError : Error {
  using Error::Error;
};

// Point sampling found no pixel of the requested class inside the
// sampling region. Carries the 1-based class index (1 = background,
// 2 = foreground) so the trainer can apply its retry policy.
struct ClassAbsentError : Error {
  explicit ClassAbsentError(int k)
      : Error("no pixel of class " + std::to_string(k) +
              " inside the sampling region"),
        class_k(k) {}
  int class_k;
};

// masked_pool: no feature-map cell carries the requested class.
struct EmptyRegionError : Error {
  using Error::Error;
};

// A point handed to map_points lies outside the record's crop window.
struct PointOutsideCropError : Error {
  using Error::Error;
};

}  // namespace sadl
