#pragma once

#include <stdexcept>
#include <string>

namespace flatland {

// Exit-code contract for the CLI: ConfigError maps to 2, every other
// failure maps to 1, success to 0.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct DimensionError : Error {
    using Error::Error;
};

struct NumericError : Error {
    using Error::Error;
};

struct CorrelationError : Error {
    using Error::Error;
};

struct CheckpointError : Error {
    enum class Kind {
        OpenFailed,
        WriteFailed,
        BadMagic,
        UnsupportedVersion,
        Truncated,
        BadCrc,
        BadField,
    };

    CheckpointError(Kind k, const std::string& msg) : Error(msg), kind(k) {}

    Kind kind;
};

}  // namespace flatland
