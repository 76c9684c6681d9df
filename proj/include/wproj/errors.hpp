#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace wproj {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid argument value (even kernel size, non-positive lambda, ...).
class ParameterError : public Error {
public:
    using Error::Error;
};

/// Inconsistent grid shapes or vector lengths.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A non-finite value (or an impossible curvature) appeared inside a solver step.
class NumericalFailure : public Error {
public:
    NumericalFailure(std::string step, const std::string& what)
        : Error(step + ": " + what), step_(std::move(step)) {}

    const std::string& step() const noexcept { return step_; }

private:
    std::string step_;
};

/// An exact-oracle solver failed to reach its optimality certificate.
class SolverError : public Error {
public:
    using Error::Error;
};

/// Malformed input file. Carries the byte offset where parsing stopped.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// File could not be opened, read or written.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace wproj
