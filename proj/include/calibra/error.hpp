#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace calibra {

enum class ErrorCode {
  DegenerateInput,
  InvalidArgument,
  ParseError,
  EmptyEstimationSet,
  UnregisteredValue,
  NonFiniteLoss,
  LengthMismatch,
  OutOfDomain,
  MissingCombination,
  DegenerateAgreement,
  ZeroVariance,
  MissingClass,
  NoLabeledSamples,
  TemplateFieldMissing,
  TokenNotInLogprobs,
  TransportError,
  MalformedResponse,
  InvalidPrior,
  IdMismatch,
  IoError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::EmptyEstimationSet: return "EmptyEstimationSet";
    case ErrorCode::UnregisteredValue: return "UnregisteredValue";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::OutOfDomain: return "OutOfDomain";
    case ErrorCode::MissingCombination: return "MissingCombination";
    case ErrorCode::DegenerateAgreement: return "DegenerateAgreement";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::MissingClass: return "MissingClass";
    case ErrorCode::NoLabeledSamples: return "NoLabeledSamples";
    case ErrorCode::TemplateFieldMissing: return "TemplateFieldMissing";
    case ErrorCode::TokenNotInLogprobs: return "TokenNotInLogprobs";
    case ErrorCode::TransportError: return "TransportError";
    case ErrorCode::MalformedResponse: return "MalformedResponse";
    case ErrorCode::InvalidPrior: return "InvalidPrior";
    case ErrorCode::IdMismatch: return "IdMismatch";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Single exception type for the library; the code identifies the failure class.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace calibra
