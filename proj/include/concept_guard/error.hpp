#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace concept_guard {

enum class ErrorCode {
    InvalidDimensions,
    NonFiniteInput,
    DegeneratePrompt,
    InvalidIndex,
    InvalidParameter,
    FormatError,
    CorruptFile,
    UnsupportedVersion,
    SchemaError,
    IoError,
    NumericDivergence,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::InvalidDimensions: return "InvalidDimensions";
        case ErrorCode::NonFiniteInput: return "NonFiniteInput";
        case ErrorCode::DegeneratePrompt: return "DegeneratePrompt";
        case ErrorCode::InvalidIndex: return "InvalidIndex";
        case ErrorCode::InvalidParameter: return "InvalidParameter";
        case ErrorCode::FormatError: return "FormatError";
        case ErrorCode::CorruptFile: return "CorruptFile";
        case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
        case ErrorCode::SchemaError: return "SchemaError";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::NumericDivergence: return "NumericDivergence";
    }
    return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (the CLI in particular) can map it to an exit status.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

namespace detail {

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const char* what) {
    if (!cond) fail(code, what);
}

}  // namespace detail

}  // namespace concept_guard
