#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pxai {

enum class ErrorKind {
  kSchemaMismatch,
  kParse,
  kEmptyDataset,
  kConfig,
  kDivergence,
  kUnavailable,
  kProtocol,
  kContractViolation,
  kFormat,
  kUnsupported,
  kNumericDegeneracy,
  kValidation,
  kSelection,
  kCompatibility,
  kRetriable,
  kProvider,
  kNotFound,
};

std::string_view to_string(ErrorKind kind);

// Single exception type for the library; `kind()` lets callers map failures
// onto exit codes and HTTP statuses without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace pxai
