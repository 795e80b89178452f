#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace adapmtl {

// Base class for all library errors.  Subclasses exist so callers (and the
// CLI) can map failure classes to distinct exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

// Non-finite value produced by an operation, or detected in a gradient.
struct NumericError : Error {
  using Error::Error;
};

// Tape misuse: backward on an empty tape, non-scalar root, foreign tensor.
struct TapeError : Error {
  using Error::Error;
};

// Invalid configuration value or malformed config file.
struct ConfigError : Error {
  using Error::Error;
};

// Malformed or inconsistent data file.
struct DataError : Error {
  using Error::Error;
};

// Operation invoked in a state that cannot honour it (e.g. querying
// statistics from an empty loss window).
struct StateError : Error {
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Derivative of the logistic function expressed through its output value.
inline double sigmoid_prime(double x) {
  const double s = sigmoid(x);
  return s * (1.0 - s);
}

inline double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

// FNV-1a over a byte string; used for config fingerprints in checkpoints.
inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace adapmtl
