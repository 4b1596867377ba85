#pragma once

#include <stdexcept>
#include <string>

namespace frn {

enum class ErrorKind {
  dimension,  // shape mismatch between operands
  contract,   // precondition violated by the caller
  format,     // malformed file content (bad magic, bad version)
  truncated,  // declared size disagrees with payload
  overflow,   // declared dimensions overflow addressable size
  config,     // invalid experiment configuration
  data,       // dataset inconsistent or missing
  numeric,    // NaN/Inf encountered
  io,         // filesystem failure
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool ok, ErrorKind kind, const std::string& what) {
  if (!ok) fail(kind, what);
}

}  // namespace frn
