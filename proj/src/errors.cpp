#include "errors.hpp"

namespace pgate {

const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidArgument: return "invalid_argument";
        case ErrorCode::InvalidPayload: return "invalid_payload";
        case ErrorCode::MalformedPayload: return "malformed_payload";
        case ErrorCode::InvalidSignatureLength: return "invalid_signature_length";
        case ErrorCode::UnsupportedScheme: return "unsupported_scheme";
        case ErrorCode::SigningFailure: return "signing_failure";
        case ErrorCode::ConfigError: return "config_error";
        case ErrorCode::UnknownApi: return "unknown_api";
        case ErrorCode::ModelMismatch: return "model_mismatch";
        case ErrorCode::StepBudgetExceeded: return "step_budget_exceeded";
        case ErrorCode::UnknownChallenge: return "unknown_challenge";
        case ErrorCode::FixtureMissing: return "fixture_missing";
        case ErrorCode::IoError: return "io_error";
    }
    return "unknown_error";
}

}  // namespace pgate
