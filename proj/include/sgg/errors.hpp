#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sgg {

// Error taxonomy. The CLI maps these onto exit codes: usage errors -> 1,
// data errors -> 2, check failures -> 3.

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IndexError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GeometryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GraphError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Parse failure in an external file; byte_offset is from the start of the file.
struct ParseError : std::runtime_error {
  std::size_t byte_offset;
  ParseError(const std::string& msg, std::size_t offset)
      : std::runtime_error(msg + " (byte " + std::to_string(offset) + ")"),
        byte_offset(offset) {}
};

}  // namespace sgg
