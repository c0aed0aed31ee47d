#pragma once

#include <stdexcept>
#include <string>

namespace pv {

// Error kinds map 1:1 onto the C API status codes and CLI exit codes.
enum class ErrKind {
  Config,    // bad parameter / schema violation
  Shape,     // operand shape mismatch
  Domain,    // math domain violation (log/sqrt of negative, ...)
  Contract,  // API contract broken (non-scalar backward root, ...)
  Format,    // malformed file
  Io,        // filesystem failure
  Runtime    // NaN loss and other aborts
};

class Error : public std::runtime_error {
public:
  Error(ErrKind kind, std::string msg)
      : std::runtime_error(std::move(msg)), kind_(kind) {}
  ErrKind kind() const noexcept { return kind_; }

private:
  ErrKind kind_;
};

[[noreturn]] inline void fail(ErrKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

}  // namespace pv
