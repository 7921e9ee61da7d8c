#pragma once

#include <stdexcept>
#include <string>

namespace tscn {

/// Incompatible matrix / tensor / layer shapes.
class ShapeError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A precondition on values (not shapes) does not hold.
class ValidationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// File-level failures: missing files, truncated or malformed binary data.
class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Configuration documents that fail to parse or name unknown keys.
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace tscn
