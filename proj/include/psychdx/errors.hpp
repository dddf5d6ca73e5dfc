#pragma once

#include <stdexcept>
#include <string>

namespace psychdx {

/// Base class for all library errors; CLI maps subclasses to exit codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// dsm_catalog
struct MalformedCodeError : Error { using Error::Error; };
struct UnknownCodeError : Error { using Error::Error; };

// dataset_pipeline
struct UnreadableSourceError : Error { using Error::Error; };
struct EmptyDatasetError : Error { using Error::Error; };
struct UnknownTemplateError : Error { using Error::Error; };
struct UnwritableTargetError : Error { using Error::Error; };

// prompt_engine
struct TemplateError : Error { using Error::Error; };
struct EmptyTranscriptError : Error { using Error::Error; };
struct PromptOverflowError : Error { using Error::Error; };
struct TooFewPredictionsError : Error { using Error::Error; };

// evaluation_harness
struct EmptyEvaluationError : Error { using Error::Error; };
struct InsufficientPointsError : Error { using Error::Error; };
struct MisalignedSeriesError : Error { using Error::Error; };

// mock_backend / orchestrator_service
struct PortInUseError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct InvalidTranscriptError : Error { using Error::Error; };
struct NoBackendReachableError : Error { using Error::Error; };
struct AuditError : Error { using Error::Error; };

}  // namespace psychdx
