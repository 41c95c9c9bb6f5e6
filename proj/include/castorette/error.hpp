#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace castorette {

enum class ErrorCode {
    InvalidArgument,
    NotFound,
    Ambiguous,
    UnknownEntityType,
    UnknownSignalType,
    CycleError,
    SelfEdge,
    UnknownContext,
    UnsortedInput,
    NonFiniteValue,
    ValidationError,
    UnknownModel,
    CorruptParams,
    Timeout,
    NoHandler,
    StoreUnavailable,
    TooShort,
    InsufficientData,
    MissingCovariate,
    MisalignedTimestamps,
    DegenerateFeature,
    SingularSystem,
    NonConvergence,
    MissingFeature,
    MalformedRow,
    Io,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries one of the codes above so the
/// service layer can map it onto a status without string matching.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& detail)
        : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code), detail_(detail) {}

    ErrorCode code() const noexcept { return code_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    ErrorCode code_;
    std::string detail_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& detail) { throw Error(code, detail); }

} // namespace castorette
