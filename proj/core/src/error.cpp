#include "xfer/error.hpp"

namespace xfer {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDimension: return "dimension error";
    case ErrorKind::kContract: return "contract error";
    case ErrorKind::kNumeric: return "numeric error";
    case ErrorKind::kUndefinedSimilarity: return "undefined similarity";
    case ErrorKind::kUndefinedCorrelation: return "undefined correlation";
    case ErrorKind::kConfig: return "config error";
    case ErrorKind::kLength: return "length error";
    case ErrorKind::kFormat: return "format error";
    case ErrorKind::kCorruption: return "corruption error";
    case ErrorKind::kCompatibility: return "compatibility error";
    case ErrorKind::kMapping: return "mapping error";
    case ErrorKind::kCapacity: return "capacity error";
    case ErrorKind::kParse: return "parse error";
    case ErrorKind::kLabel: return "label error";
    case ErrorKind::kSpec: return "spec error";
    case ErrorKind::kInput: return "input error";
    case ErrorKind::kIo: return "io error";
    case ErrorKind::kSize: return "size error";
    case ErrorKind::kSampling: return "sampling error";
    case ErrorKind::kIndex: return "index error";
    case ErrorKind::kDegeneracy: return "degeneracy error";
    case ErrorKind::kDivergence: return "training divergence";
  }
  return "error";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

}  // namespace xfer
