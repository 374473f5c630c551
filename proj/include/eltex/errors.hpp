#pragma once

#include <stdexcept>
#include <string>

namespace eltex {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A precondition on caller-supplied input was violated.
class ValidationError : public Error {
public:
    using Error::Error;
};

class NotFoundError : public Error {
public:
    using Error::Error;
};

/// The operation conflicts with one already in progress (e.g. a second
/// dedup pass on the same session).
class ConflictError : public Error {
public:
    using Error::Error;
};

/// Structured output could not be parsed or did not match its schema.
/// The raw model text is kept for logging.
class SchemaParseError : public Error {
public:
    SchemaParseError(const std::string& what, std::string raw_text)
        : Error(what), raw_text_(std::move(raw_text)) {}

    const std::string& raw_text() const noexcept { return raw_text_; }

private:
    std::string raw_text_;
};

/// The model declined to answer (alignment safeguard).
class RefusalError : public Error {
public:
    RefusalError(const std::string& what, std::string raw_text)
        : Error(what), raw_text_(std::move(raw_text)) {}

    const std::string& raw_text() const noexcept { return raw_text_; }

private:
    std::string raw_text_;
};

/// An embedding backend or store failed.
class BackendError : public Error {
public:
    using Error::Error;
};

}  // namespace eltex
