#pragma once

#include <stdexcept>
#include <string>

namespace spheroview {

// Base for all recoverable library errors. The CLI maps these to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad caller input (malformed file, out-of-range argument).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

}  // namespace spheroview
