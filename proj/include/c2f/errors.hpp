#pragma once

#include <stdexcept>
#include <string>

namespace c2f {

// Invalid or inconsistent configuration values.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or structure mismatch between tensors, parameter sets or grids.
struct StructuralError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A demonstration pose that cannot be expressed in the discrete action space.
struct EncodingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed transitions (e.g. missing per-depth coordinates).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite loss or gradients.
struct TrainingDivergedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Environment used out of order, e.g. stepping a finished episode.
struct ProtocolError : std::logic_error {
  using std::logic_error::logic_error;
};

// Corrupt or truncated container files.
struct IntegrityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace c2f
