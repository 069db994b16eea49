#pragma once

#include <stdexcept>
#include <string>

namespace emd {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or layer dimensions do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unusable input data (parse failures, empty corpora, bad ids).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Artifact version or vocabulary mismatch between models and files.
class CompatError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument combination supplied by a caller.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace emd
