#pragma once

#include <stdexcept>
#include <string>

namespace agrisr {

// Error taxonomy shared across the library. The CLI maps categories onto
// exit codes (usage/config -> 2, divergence -> 3).
enum class ErrorCode {
    invalid_argument,
    invalid_spec,
    invalid_architecture,
    resolution_mismatch,
    missing_band,
    degenerate_input,
    degenerate_labels,
    empty_dataset,
    unsupported_task,
    singular_system,
    divergence,
    io,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

inline const char* error_code_name(ErrorCode c) {
    switch (c) {
        case ErrorCode::invalid_argument:     return "invalid-argument";
        case ErrorCode::invalid_spec:         return "invalid-spec";
        case ErrorCode::invalid_architecture: return "invalid-architecture";
        case ErrorCode::resolution_mismatch:  return "resolution-mismatch";
        case ErrorCode::missing_band:         return "missing-band";
        case ErrorCode::degenerate_input:     return "degenerate-input";
        case ErrorCode::degenerate_labels:    return "degenerate-labels";
        case ErrorCode::empty_dataset:        return "empty-dataset";
        case ErrorCode::unsupported_task:     return "unsupported-task";
        case ErrorCode::singular_system:      return "singular-system";
        case ErrorCode::divergence:           return "divergence";
        case ErrorCode::io:                   return "io";
    }
    return "unknown";
}

[[noreturn]] inline void raise(ErrorCode code, const std::string& message) {
    throw Error(code, std::string(error_code_name(code)) + ": " + message);
}

}  // namespace agrisr
