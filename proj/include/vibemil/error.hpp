#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vibemil {

enum class ErrorCode {
    ParseError,
    SchemaError,
    DuplicateRecording,
    UnknownSubject,
    EmptyInput,
    EmptyBag,
    NoDays,
    NoTrainingRows,
    TooFewSubjects,
    OneClassOnly,
    MissingSubject,
    DuplicateSubject,
    DegenerateData,
    ArityMismatch,
    StaleCache,
    NoPositiveBags,
    NoUsableDays,
    MissingFoldModel,
    InvalidSpec,
    ConfigError,
    DependencyError,
    IoError,
};

std::string_view to_string(ErrorCode code) noexcept;

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

}  // namespace vibemil
