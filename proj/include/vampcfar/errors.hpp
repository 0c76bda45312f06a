#pragma once

#include <stdexcept>
#include <string>

namespace vampcfar {

// Every failure raised by the library derives from Error.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidDimension : public Error {
 public:
  using Error::Error;
};

// A denoiser or LMMSE divergence hit exactly 0 or 1, so the extrinsic update
// would divide by zero.
class DegenerateDivergence : public Error {
 public:
  using Error::Error;
};

class NumericFailure : public Error {
 public:
  using Error::Error;
};

// Too few null samples left to form a variance estimate. The PCD loop reports
// this as a detector failure for the trial.
class DetectorFailure : public Error {
 public:
  using Error::Error;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace vampcfar
