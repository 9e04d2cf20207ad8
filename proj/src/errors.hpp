#pragma once

#include <stdexcept>
#include <string>

namespace pgate {

enum class ErrorCode {
    InvalidArgument,
    InvalidPayload,
    MalformedPayload,
    InvalidSignatureLength,
    UnsupportedScheme,
    SigningFailure,
    ConfigError,
    UnknownApi,
    ModelMismatch,
    StepBudgetExceeded,
    UnknownChallenge,
    FixtureMissing,
    IoError,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

}  // namespace pgate
