#pragma once

#include <stdexcept>
#include <string>

namespace nflat {

/// Malformed or missing input data (files, checkpoints, tag strings).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline DataError file_error(const std::string& path, std::size_t line, const std::string& what) {
  return DataError(path + ":" + std::to_string(line) + ": " + what);
}

}  // namespace nflat
