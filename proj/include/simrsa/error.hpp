#pragma once

#include <stdexcept>
#include <string>

namespace simrsa {

/// Base error for anything the toolkit rejects at runtime.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Configuration problems that should stop a run before any work is done.
/// The CLI maps these to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace simrsa
