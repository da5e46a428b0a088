#include "spanft/error.hpp"

namespace spanft {

std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::MissingMarker:     return "MissingMarker";
        case ErrorKind::MalformedList:     return "MalformedList";
        case ErrorKind::SpanNotFound:      return "SpanNotFound";
        case ErrorKind::OrderViolation:    return "OrderViolation";
        case ErrorKind::SchemaError:       return "SchemaError";
        case ErrorKind::AnnotationFailed:  return "AnnotationFailed";
        case ErrorKind::TransportError:    return "TransportError";
        case ErrorKind::UnknownPair:       return "UnknownPair";
        case ErrorKind::NoPerturbableSlot: return "NoPerturbableSlot";
        case ErrorKind::SpanOutOfRange:    return "SpanOutOfRange";
        case ErrorKind::ContextOverflow:   return "ContextOverflow";
        case ErrorKind::ShapeMismatch:     return "ShapeMismatch";
        case ErrorKind::EmptyMask:         return "EmptyMask";
        case ErrorKind::EmptyBatch:        return "EmptyBatch";
        case ErrorKind::NaNLoss:           return "NaNLoss";
        case ErrorKind::EmptyDataset:      return "EmptyDataset";
        case ErrorKind::UsageError:        return "UsageError";
        case ErrorKind::InvalidArgument:   return "InvalidArgument";
        case ErrorKind::IoError:           return "IoError";
        case ErrorKind::NotImplemented:    return "NotImplemented";
    }
    return "Unknown";
}

int exit_code(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::UsageError:        return 2;
        case ErrorKind::IoError:           return 3;
        case ErrorKind::SchemaError:       return 4;
        case ErrorKind::MissingMarker:
        case ErrorKind::MalformedList:
        case ErrorKind::SpanNotFound:
        case ErrorKind::OrderViolation:
        case ErrorKind::SpanOutOfRange:    return 5;
        case ErrorKind::AnnotationFailed:
        case ErrorKind::UnknownPair:       return 6;
        case ErrorKind::TransportError:    return 7;
        case ErrorKind::NoPerturbableSlot: return 8;
        case ErrorKind::ContextOverflow:
        case ErrorKind::ShapeMismatch:     return 9;
        case ErrorKind::EmptyMask:
        case ErrorKind::EmptyBatch:
        case ErrorKind::EmptyDataset:      return 10;
        case ErrorKind::NaNLoss:           return 11;
        case ErrorKind::InvalidArgument:   return 12;
        case ErrorKind::NotImplemented:    return 13;
    }
    return 1;
}

} // namespace spanft
