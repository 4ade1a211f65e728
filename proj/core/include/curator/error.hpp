#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace curator {

// Base for every error raised by the library. The CLI maps ValidationError
// (and subclasses) to exit code 1 and everything else to exit code 2.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Input violates a documented precondition or contract.
class ValidationError : public Error {
public:
    using Error::Error;
};

// Malformed input file. line() is 1-based, 0 when not line oriented.
class ParseError : public ValidationError {
public:
    ParseError(const std::string& source, std::size_t line, const std::string& what)
        : ValidationError(source + (line ? ":" + std::to_string(line) : std::string()) + ": " + what),
          line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class NotFoundError : public Error {
public:
    using Error::Error;
};

// Request conflicts with current state (duplicate submission, completed task).
class ConflictError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace curator
