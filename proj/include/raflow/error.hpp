#pragma once

#include <stdexcept>
#include <string>

namespace raflow {

enum class ErrorCode {
  NonFinite,
  EmptyFrame,
  OriginPoint,
  LengthMismatch,
  TooFewPoints,
  DegenerateConfiguration,
  ShapeMismatch,
  InvalidAxis,
  GatherOutOfBounds,
  NonScalarRoot,
  StaleTape,
  ConfigInvalid,
  IoError,
  DatasetEmpty,
  DivergedLoss,
};

const char* to_string(ErrorCode code);

// All library failures surface as this exception; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace raflow
