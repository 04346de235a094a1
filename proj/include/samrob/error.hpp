#pragma once

#include <stdexcept>
#include <string>

namespace samrob {

// Precondition or argument violation. Maps to CLI exit code 1.
class UsageError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// Malformed or inconsistent file content. Maps to CLI exit code 2.
class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Solver failure, non-finite loss, singular systems. Maps to CLI exit code 3.
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace samrob
