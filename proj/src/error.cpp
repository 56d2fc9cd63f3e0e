#include "vibemil/error.hpp"

namespace vibemil {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::SchemaError: return "SchemaError";
        case ErrorCode::DuplicateRecording: return "DuplicateRecording";
        case ErrorCode::UnknownSubject: return "UnknownSubject";
        case ErrorCode::EmptyInput: return "EmptyInput";
        case ErrorCode::EmptyBag: return "EmptyBag";
        case ErrorCode::NoDays: return "NoDays";
        case ErrorCode::NoTrainingRows: return "NoTrainingRows";
        case ErrorCode::TooFewSubjects: return "TooFewSubjects";
        case ErrorCode::OneClassOnly: return "OneClassOnly";
        case ErrorCode::MissingSubject: return "MissingSubject";
        case ErrorCode::DuplicateSubject: return "DuplicateSubject";
        case ErrorCode::DegenerateData: return "DegenerateData";
        case ErrorCode::ArityMismatch: return "ArityMismatch";
        case ErrorCode::StaleCache: return "StaleCache";
        case ErrorCode::NoPositiveBags: return "NoPositiveBags";
        case ErrorCode::NoUsableDays: return "NoUsableDays";
        case ErrorCode::MissingFoldModel: return "MissingFoldModel";
        case ErrorCode::InvalidSpec: return "InvalidSpec";
        case ErrorCode::ConfigError: return "ConfigError";
        case ErrorCode::DependencyError: return "DependencyError";
        case ErrorCode::IoError: return "IoError";
    }
    return "Error";
}

}  // namespace vibemil
