#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cfr {

/// Broad failure categories. The CLI maps each one to a distinct exit code.
enum class ErrorKind {
    io = 2,          ///< missing or unreadable file
    parse = 3,       ///< malformed input (JSON, CSV, checkpoint)
    validation = 4,  ///< a precondition or invariant does not hold
    mismatch = 5,    ///< artifacts that must agree (vocab hash, config hash, split) do not
};

inline std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::io: return "io";
        case ErrorKind::parse: return "parse";
        case ErrorKind::validation: return "validation";
        case ErrorKind::mismatch: return "mismatch";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

inline void require(bool condition, const std::string& message) {
    if (!condition) fail(ErrorKind::validation, message);
}

}  // namespace cfr
