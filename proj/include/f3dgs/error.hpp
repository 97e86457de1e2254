// Copyright Contributors to the f3dgs Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace f3dgs {

enum class ErrorKind {
    // scene / feature assembly
    NonFiniteInput,
    RangeError,
    EmptyMask,
    MissingNormStats,
    OutOfRange,
    // ply
    BadMagic,
    UnsupportedFormat,
    MissingProperty,
    TruncatedBody,
    // codec
    NonFiniteChannel,
    CodeOutOfRange,
    CorruptPng,
    ChannelCountMismatch,
    VersionUnsupported,
    // dataset
    EmptyInput,
    EmptyCaption,
    BadMagnitude,
    ParseError,
    DuplicateId,
    // detector
    ShapeMismatch,
    NonFiniteActivation,
    SingleClassTrainingSet,
    MaskMismatch,
    EmptyScene,
    GroupMapMismatch,
    // bench
    EmptyManifest,
    NoFakesForEditor,
    MissingPrediction,
    // plumbing
    IoError,
};

/// Domain error carrying a machine-checkable kind plus a human message.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

const char* error_kind_name(ErrorKind kind);

[[noreturn]] inline void raise(ErrorKind kind, const std::string& message) {
    throw Error(kind, std::string(error_kind_name(kind)) + ": " + message);
}

} // namespace f3dgs
