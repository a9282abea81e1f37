#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace atlas {

/// Base for every error raised by the library. `kind()` is a stable tag used in
/// episode logs and CLI diagnostics.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define ATLAS_DEFINE_ERROR(Name)                                          \
    class Name : public Error {                                           \
    public:                                                               \
        explicit Name(const std::string& message) : Error(#Name, message) {} \
    };

// policy backends
ATLAS_DEFINE_ERROR(SchemaViolation)
ATLAS_DEFINE_ERROR(BackendUnavailable)
ATLAS_DEFINE_ERROR(NoMatchingRule)
ATLAS_DEFINE_ERROR(SinkWriteFailure)

// fixtures, config and persisted files
ATLAS_DEFINE_ERROR(ParseError)
ATLAS_DEFINE_ERROR(ValidationError)
ATLAS_DEFINE_ERROR(VersionMismatch)

// environment
ATLAS_DEFINE_ERROR(SiteMismatch)
ATLAS_DEFINE_ERROR(EpisodeTerminated)
ATLAS_DEFINE_ERROR(StepBudgetExhausted)

// agent loop
ATLAS_DEFINE_ERROR(EmptyProposal)
ATLAS_DEFINE_ERROR(SummarizerFailure)

#undef ATLAS_DEFINE_ERROR

/// Raised by the replay backend when the live request sequence departs from
/// the recording.
class ReplayMismatch : public Error {
public:
    ReplayMismatch(std::size_t index, const std::string& message)
        : Error("ReplayMismatch", message), index_(index) {}

    std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

}  // namespace atlas
