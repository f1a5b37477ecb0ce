#pragma once

#include <stdexcept>
#include <string>

namespace qmagpi {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument or configuration value was violated.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A request would exceed a resource guard (e.g. sample count).
class ResourceLimit : public Error {
 public:
  using Error::Error;
};

/// auto_phase found no usable signal at the reference frequency.
class NoPhaseFound : public Error {
 public:
  using Error::Error;
};

/// Configuration file problem; `where` names the offending key path.
class ConfigError : public Error {
 public:
  ConfigError(std::string where, const std::string& what)
      : Error(where.empty() ? what : where + ": " + what), where_(std::move(where)) {}
  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

}  // namespace qmagpi
