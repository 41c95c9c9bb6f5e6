#include "castorette/error.hpp"

namespace castorette {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::Ambiguous: return "Ambiguous";
    case ErrorCode::UnknownEntityType: return "UnknownEntityType";
    case ErrorCode::UnknownSignalType: return "UnknownSignalType";
    case ErrorCode::CycleError: return "CycleError";
    case ErrorCode::SelfEdge: return "SelfEdge";
    case ErrorCode::UnknownContext: return "UnknownContext";
    case ErrorCode::UnsortedInput: return "UnsortedInput";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::ValidationError: return "ValidationError";
    case ErrorCode::UnknownModel: return "UnknownModel";
    case ErrorCode::CorruptParams: return "CorruptParams";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::NoHandler: return "NoHandler";
    case ErrorCode::StoreUnavailable: return "StoreUnavailable";
    case ErrorCode::TooShort: return "TooShort";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::MissingCovariate: return "MissingCovariate";
    case ErrorCode::MisalignedTimestamps: return "MisalignedTimestamps";
    case ErrorCode::DegenerateFeature: return "DegenerateFeature";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::MissingFeature: return "MissingFeature";
    case ErrorCode::MalformedRow: return "MalformedRow";
    case ErrorCode::Io: return "Io";
    }
    return "Unknown";
}

} // namespace castorette
