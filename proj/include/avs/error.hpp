#pragma once

#include <stdexcept>
#include <string>

namespace avs {

/// Precondition or argument outside the operation's domain.
class DomainError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Scene generation could not satisfy its configuration within the retry budget.
class GenerationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A curation sample could not be produced; the caller moves on to the next attempt.
class SampleSkip : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class CurationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Training produced non-finite values.
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace avs
