#ifndef SCL_CORE_ERRORS_HPP
#define SCL_CORE_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace scl {

/// Base of every error raised by the library. The CLI maps these onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad argument values (out-of-range onset, negative lambda, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Pixel/channel layout problems on image inputs.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Manifest and frame loading failures. Messages always carry the offending path.
class IngestionError : public Error {
 public:
  using Error::Error;
};

/// A model was asked for a head or mode its architecture does not have.
class CapabilityError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss during training.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, std::size_t epoch, std::size_t batch)
      : Error(what + " (epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) + ")"),
        epoch_(epoch),
        batch_(batch) {}

  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t batch() const noexcept { return batch_; }

 private:
  std::size_t epoch_;
  std::size_t batch_;
};

}  // namespace scl

#endif  // SCL_CORE_ERRORS_HPP
