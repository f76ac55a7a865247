#pragma once

#include <stdexcept>
#include <string>

namespace layermon {

// Error categories map 1:1 onto CLI exit codes:
// ValidationError -> 1, IoError -> 2, NumericalError -> 3.

class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace layermon
