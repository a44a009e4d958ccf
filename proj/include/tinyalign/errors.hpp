#pragma once

#include <stdexcept>
#include <string>

namespace tinyalign {

enum class ErrorKind {
  shape,
  config,
  data,
  numeric,
  format,
  checksum,
  invalid_argument,
  tracking_lost,
};

// Every library failure is an Error; the kind drives CLI exit codes and
// embed-api return codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::shape: return "shape";
    case ErrorKind::config: return "config";
    case ErrorKind::data: return "data";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::format: return "format";
    case ErrorKind::checksum: return "checksum";
    case ErrorKind::invalid_argument: return "invalid-argument";
    case ErrorKind::tracking_lost: return "tracking-lost";
  }
  return "unknown";
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace tinyalign
