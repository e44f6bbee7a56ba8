#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace dhrag {

/// Base class for every error thrown by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// A caller violated an operation's preconditions (dimension mismatch,
/// zero vector, empty score list, duplicate id, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A configuration value or a stored-state invariant is out of contract.
/// Carries the names of the violated fields/invariants so callers can
/// report all of them at once.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::vector<std::string>& violations)
      : Error(join(violations)), violations_(violations) {}
  explicit ValidationError(const std::string& violation)
      : ValidationError(std::vector<std::string>{violation}) {}

  const std::vector<std::string>& violations() const { return violations_; }

 private:
  static std::string join(const std::vector<std::string>& violations) {
    std::string out = "validation failed:";
    for (const auto& v : violations) {
      out += "\n  - " + v;
    }
    return out;
  }

  std::vector<std::string> violations_;
};

/// A file (corpus, dataset, snapshot, config) could not be parsed.
/// line == 0 means the error is not tied to a specific line.
class ParseError : public Error {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& detail)
      : Error(format(path, line, detail)), path_(path), line_(line) {}

  const std::string& path() const { return path_; }
  std::size_t line() const { return line_; }

 private:
  static std::string format(const std::string& path, std::size_t line,
                            const std::string& detail) {
    if (line == 0) return path + ": " + detail;
    return path + ":" + std::to_string(line) + ": " + detail;
  }

  std::string path_;
  std::size_t line_;
};

/// An HTTP exchange failed. status == 0 means no response was received
/// (connect failure or timeout); otherwise it is the HTTP status code.
class TransportError : public Error {
 public:
  TransportError(const std::string& endpoint, int status, int attempts,
                 const std::string& detail)
      : Error(format(endpoint, status, attempts, detail)),
        endpoint_(endpoint),
        status_(status),
        attempts_(attempts) {}

  const std::string& endpoint() const { return endpoint_; }
  int status() const { return status_; }
  int attempts() const { return attempts_; }

 private:
  static std::string format(const std::string& endpoint, int status, int attempts,
                            const std::string& detail) {
    std::string out = endpoint + ": " + detail;
    if (status != 0) out += " (http status " + std::to_string(status) + ")";
    if (attempts > 1) out += " after " + std::to_string(attempts) + " attempts";
    return out;
  }

  std::string endpoint_;
  int status_;
  int attempts_;
};

}  // namespace dhrag
