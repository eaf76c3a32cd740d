#pragma once

#include <stdexcept>
#include <string>

namespace mathforge {

/// Base class for every error the toolkit raises deliberately.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller passed arguments that violate an operation's precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Reading or writing a file failed, or its contents are malformed.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mathforge
