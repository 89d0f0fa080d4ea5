#ifndef RATEATTACK_ERROR_H_
#define RATEATTACK_ERROR_H_

#include <stdexcept>
#include <string>
#include <string_view>

namespace rateattack {

enum class ErrorCode {
  kShapeMismatch,
  kNonFinite,
  kInvalidArgument,
  kUnsupportedFormat,
  kTruncated,
  kCorruptStream,
  kIo,
  kDimension,
  kUntrained,
  kDivergence,
};

std::string_view ErrorCodeName(ErrorCode code);

// All library failures are reported as this exception. `code()` is stable
// and meant for programmatic handling; `what()` carries the details.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kUnsupportedFormat: return "unsupported_format";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kCorruptStream: return "corrupt_stream";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kDimension: return "dimension";
    case ErrorCode::kUntrained: return "untrained";
    case ErrorCode::kDivergence: return "divergence";
  }
  return "unknown";
}

}  // namespace rateattack

#endif  // RATEATTACK_ERROR_H_
