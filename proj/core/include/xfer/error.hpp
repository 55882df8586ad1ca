#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace xfer {

enum class ErrorKind {
  kDimension,
  kContract,
  kNumeric,
  kUndefinedSimilarity,
  kUndefinedCorrelation,
  kConfig,
  kLength,
  kFormat,
  kCorruption,
  kCompatibility,
  kMapping,
  kCapacity,
  kParse,
  kLabel,
  kSpec,
  kInput,
  kIo,
  kSize,
  kSampling,
  kIndex,
  kDegeneracy,
  kDivergence,
};

std::string_view to_string(ErrorKind kind);

// Every failure raised by the library carries a kind so callers and tests can
// dispatch on the category instead of parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace xfer
