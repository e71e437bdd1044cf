#pragma once

#include <stdexcept>
#include <string>

namespace saek {

// Base of every error the kit raises. The subclasses map onto the CLI exit
// codes: validation/shape -> 1, numeric -> 2, io -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace saek
