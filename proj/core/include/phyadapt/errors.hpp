#pragma once

#include <stdexcept>
#include <string>

namespace phyadapt {

// Shape/dimension mismatch in a tensor operation. Message names both shapes.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad configuration: unknown node id, unresolved chain, invalid spec field.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Structured validation failure (tree invariants, file schemas).
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// File I/O and container-format failures (bad magic, truncation).
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad input data fed to a forward pass (out-of-range token id, empty loss).
struct InputError : std::runtime_error {
    explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace phyadapt
