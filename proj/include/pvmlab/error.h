#pragma once

#include <stdexcept>
#include <string>

namespace pvmlab {

enum class ErrorKind {
  kInvalidArgument,  // precondition or shape violation
  kConfig,           // bad or missing configuration
  kNumeric,          // NaN/Inf or divergence
  kIo,               // filesystem / format problems
};

// All library failures are reported through this type. `code` is a stable,
// machine-readable identifier (e.g. "SHAPE_MISMATCH", "CONFIG_NOT_FOUND").
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string code, const std::string& message)
      : std::runtime_error(message), kind_(kind), code_(std::move(code)) {}

  ErrorKind kind() const { return kind_; }
  const std::string& code() const { return code_; }

 private:
  ErrorKind kind_;
  std::string code_;
};

[[noreturn]] inline void fail(std::string code, const std::string& message) {
  throw Error(ErrorKind::kInvalidArgument, std::move(code), message);
}

}  // namespace pvmlab
