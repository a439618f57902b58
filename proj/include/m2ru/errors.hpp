#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace m2ru {

// Root of every error raised by the library. Callers that only care about
// "something in the simulator rejected this" catch this type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class SeedError : public Error {
 public:
  using Error::Error;
};

class ConsistencyError : public Error {
 public:
  using Error::Error;
};

class EmptyBufferError : public Error {
 public:
  using Error::Error;
};

// Bitline current above the integrator's design current.
class OverrangeError : public Error {
 public:
  using Error::Error;
};

// Malformed input file. `location()` is a byte offset for binary formats and
// a 1-based line number for text formats.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t location)
      : Error(what), location_(location) {}
  std::size_t location() const noexcept { return location_; }

 private:
  std::size_t location_;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace m2ru
