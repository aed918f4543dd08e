#pragma once

#include <stdexcept>
#include <string>

namespace kf {

struct FactorizationFailure : std::runtime_error {
    explicit FactorizationFailure(const std::string& what)
        : std::runtime_error("factorization failure: " + what) {}
};

struct DegenerateLabels : std::runtime_error {
    explicit DegenerateLabels(const std::string& what)
        : std::runtime_error("degenerate labels: " + what) {}
};

struct DimensionMismatch : std::runtime_error {
    explicit DimensionMismatch(const std::string& what)
        : std::runtime_error("dimension mismatch: " + what) {}
};

struct InvalidArgument : std::runtime_error {
    explicit InvalidArgument(const std::string& what)
        : std::runtime_error(what) {}
};

struct BadMagic : std::runtime_error {
    explicit BadMagic(const std::string& what)
        : std::runtime_error("bad IDX magic: " + what) {}
};

struct TruncatedFile : std::runtime_error {
    explicit TruncatedFile(const std::string& what)
        : std::runtime_error("truncated file: " + what) {}
};

struct DimensionOverflow : std::runtime_error {
    explicit DimensionOverflow(const std::string& what)
        : std::runtime_error("dimension overflow: " + what) {}
};

struct ZeroVector : std::runtime_error {
    explicit ZeroVector(const std::string& what)
        : std::runtime_error("zero vector: " + what) {}
};

}  // namespace kf
