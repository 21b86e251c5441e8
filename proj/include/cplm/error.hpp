#pragma once

#include <stdexcept>
#include <string>

namespace cplm {

// Bad shapes, out-of-range indices, non-finite inputs.
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A dense allocation guard was exceeded.
class CapacityError : public std::length_error {
 public:
  using std::length_error::length_error;
};

// Cholesky factorization of the damped system failed at the given damping.
class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& what, double mu)
      : std::runtime_error(what), mu_(mu) {}
  double mu() const noexcept { return mu_; }

 private:
  double mu_;
};

// The damping escalation ladder was exhausted.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed binary or image file. `offset` is the byte position where
// decoding stopped.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// Filesystem failures (unreadable input, unwritable output).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cplm
