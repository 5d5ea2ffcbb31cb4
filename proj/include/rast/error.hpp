#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rast {

enum class ErrorCode {
  kAllMasked,
  kEmptyResult,
  kDimensionMismatch,
  kKTooLarge,
  kEmptyCorpus,
  kAnswerNotInContext,
  kInputTooLong,
  kEmptyPool,
  kStaleIndex,
  kInvalidArgument,
  kValidation,
  kStageDependency,
  kIo,
};

std::string_view to_string(ErrorCode code);

// Single exception type for the library; callers switch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

#define RAST_REQUIRE(cond, code, msg)            \
  do {                                           \
    if (!(cond)) throw ::rast::Error((code), (msg)); \
  } while (0)

}  // namespace rast
