#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace phc {

enum class ErrorCode {
    InvalidArgument,
    ShapeMismatch,
    NonFinite,
    OutOfRange,
    Parse,
    Io,
    Schema,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library. `code()` is stable and machine-readable;
/// the CLI prints it as the first token of its single-line error report.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
    if (!condition) {
        throw Error(code, message);
    }
}

} // namespace phc
