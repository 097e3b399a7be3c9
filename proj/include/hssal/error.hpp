#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hssal {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke an operation's precondition (shape, range, set membership).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// The labeling-ratio schedule cannot produce a valid sequence of budgets.
class ScheduleError : public Error {
 public:
  using Error::Error;
};

/// An iterative numerical routine failed to converge.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::size_t iterations)
      : Error(what + " (after " + std::to_string(iterations) + " iterations)"),
        iterations_(iterations) {}

  std::size_t iterations() const noexcept { return iterations_; }

 private:
  std::size_t iterations_;
};

/// Malformed or inconsistent on-disk data.
class ParseError : public Error {
 public:
  enum class Kind { kIo, kBadMagic, kBadVersion, kTruncated, kInvalidValue, kInvalidLabel };

  ParseError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

namespace detail {

[[noreturn]] inline void contract_failure(const std::string& what) { throw ContractViolation(what); }

}  // namespace detail

#define HSSAL_REQUIRE(cond, msg)                             \
  do {                                                       \
    if (!(cond)) ::hssal::detail::contract_failure((msg));   \
  } while (false)

}  // namespace hssal
