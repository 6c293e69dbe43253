#pragma once

#include <stdexcept>
#include <string>

namespace dru {

// Incompatible tensor/parameter shapes. Messages carry both shapes.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad data content: out-of-range labels, degenerate volumes, NaN loss, gaps.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse: non-scalar loss node, invalid configuration values.
class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed files: bad magic bytes, wrong PNG channel count or bit depth.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dru
