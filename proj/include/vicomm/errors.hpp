#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vicomm {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  DimensionError(const std::string& what, std::size_t expected, std::size_t got)
      : Error(what + ": expected dimension " + std::to_string(expected) + ", got " +
              std::to_string(got)) {}
};

class IndexError : public Error {
 public:
  IndexError(std::size_t index, std::size_t count)
      : Error("device index " + std::to_string(index) + " out of range [0, " +
              std::to_string(count) + ")") {}
};

/// Invalid configuration: bad parameters, divisibility violations, malformed config files.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A numerical routine failed (power iteration stalled, singular system, ...).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Exhaustive enumeration requested over a space that is too large.
class SizeError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Iterates left the finite range or blew past the divergence threshold.
class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t iteration, double norm)
      : Error("divergence at iteration " + std::to_string(iteration) +
              " (iterate norm " + std::to_string(norm) + ")"),
        iteration_(iteration),
        norm_(norm) {}

  std::size_t iteration() const noexcept { return iteration_; }
  double norm() const noexcept { return norm_; }

 private:
  std::size_t iteration_;
  double norm_;
};

}  // namespace vicomm
