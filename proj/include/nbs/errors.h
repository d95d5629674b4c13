#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nbs {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input text. Carries the 1-based line and the byte offset of the
// offending token.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t offset)
      : Error("line " + std::to_string(line) + ", offset " +
              std::to_string(offset) + ": " + what),
        line_(line),
        offset_(offset) {}

  std::size_t line() const { return line_; }
  std::size_t offset() const { return offset_; }

 private:
  std::size_t line_;
  std::size_t offset_;
};

// Unknown variable, bad state index, or other argument outside its domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

// A documented precondition of an operation does not hold.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// Evidence or conditioning values with zero probability mass.
class InconsistencyError : public Error {
 public:
  using Error::Error;
};

// Exact inference refused because the problem exceeds the enumeration guard.
class SizeGuardError : public Error {
 public:
  using Error::Error;
};

// Intermediate factor larger than the configured cap.
class ResourceError : public Error {
 public:
  using Error::Error;
};

class UnsupportedError : public Error {
 public:
  using Error::Error;
};

class InitializationError : public Error {
 public:
  using Error::Error;
};

// Optimizer divergence or a non-finite training loss.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::ptrdiff_t sample_index = -1)
      : Error(what), sample_index_(sample_index) {}

  // Offending sample within the batch, or -1 when not attributable.
  std::ptrdiff_t sample_index() const { return sample_index_; }

 private:
  std::ptrdiff_t sample_index_;
};

class ScheduleError : public Error {
 public:
  using Error::Error;
};

// Parameters were produced under a different input encoding or shape.
class VersionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace nbs
