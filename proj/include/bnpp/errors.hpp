#pragma once

#include <stdexcept>
#include <string>

namespace bnpp {

// Incompatible or malformed tensor/convolution geometry.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite or otherwise out-of-domain scalar input.
struct ValueError : std::runtime_error {
    explicit ValueError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed serialized payload (model files, IDX datasets).
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// Filesystem-level failure, carries the offending path.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace bnpp
