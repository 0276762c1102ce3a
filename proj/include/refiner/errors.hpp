#pragma once

#include <stdexcept>
#include <string>

namespace refiner {

// Malformed input: bad files, shape mismatches, missing ground truth.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite values where finite ones are required.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace refiner
