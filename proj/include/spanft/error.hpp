#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace spanft {

enum class ErrorKind {
    // corpus
    MissingMarker,
    MalformedList,
    SpanNotFound,
    OrderViolation,
    SchemaError,
    // annotate
    AnnotationFailed,
    TransportError,
    UnknownPair,
    // synth
    NoPerturbableSlot,
    // align
    SpanOutOfRange,
    // model
    ContextOverflow,
    ShapeMismatch,
    // losses
    EmptyMask,
    EmptyBatch,
    // trainer
    NaNLoss,
    EmptyDataset,
    // cli and shared
    UsageError,
    InvalidArgument,
    IoError,
    NotImplemented,
};

std::string_view to_string(ErrorKind kind) noexcept;

// Distinct process exit code per error family, used by the CLI.
int exit_code(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string & message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string & message) {
    throw Error(kind, message);
}

} // namespace spanft
