#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pogcn {

enum class ErrorKind {
    DuplicateBehavior,
    EmptyLevel,
    EmptyOrder,
    UnknownBehavior,
    EmptyUniverse,
    TooManyBehaviors,
    IndexOutOfRange,
    DuplicateBehaviorLog,
    UnrankedCombination,
    AllFiltered,
    InvalidArgument,
    InvalidDimension,
    DimensionMismatch,
    NonFiniteValue,
    EmptyGraph,
    NoNegativeAvailable,
    NonFiniteLoss,
    Diverged,
    InvalidFraction,
    NoTestUsers,
    FileNotFound,
    ParseError,
    FormatError,
    GridTooLarge,
    UnknownUser,
};

inline std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::DuplicateBehavior: return "DuplicateBehavior";
    case ErrorKind::EmptyLevel: return "EmptyLevel";
    case ErrorKind::EmptyOrder: return "EmptyOrder";
    case ErrorKind::UnknownBehavior: return "UnknownBehavior";
    case ErrorKind::EmptyUniverse: return "EmptyUniverse";
    case ErrorKind::TooManyBehaviors: return "TooManyBehaviors";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::DuplicateBehaviorLog: return "DuplicateBehaviorLog";
    case ErrorKind::UnrankedCombination: return "UnrankedCombination";
    case ErrorKind::AllFiltered: return "AllFiltered";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::InvalidDimension: return "InvalidDimension";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::NonFiniteValue: return "NonFiniteValue";
    case ErrorKind::EmptyGraph: return "EmptyGraph";
    case ErrorKind::NoNegativeAvailable: return "NoNegativeAvailable";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::Diverged: return "Diverged";
    case ErrorKind::InvalidFraction: return "InvalidFraction";
    case ErrorKind::NoTestUsers: return "NoTestUsers";
    case ErrorKind::FileNotFound: return "FileNotFound";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::FormatError: return "FormatError";
    case ErrorKind::GridTooLarge: return "GridTooLarge";
    case ErrorKind::UnknownUser: return "UnknownUser";
    }
    return "Unknown";
}

/// All library failures surface as this exception; `kind()` is stable and
/// is what the CLI prints as the machine-parsable error tag.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, std::string(to_string(kind)) + ": " + message);
}

} // namespace pogcn
