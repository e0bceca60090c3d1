#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hdccl {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class CapacityError : public Error {
public:
    using Error::Error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class NormalizationError : public Error {
public:
    NormalizationError(const std::string& what, std::ptrdiff_t row) : Error(what), row_(row) {}
    [[nodiscard]] std::ptrdiff_t row() const { return row_; }

private:
    std::ptrdiff_t row_;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class BatchSizeError : public Error {
public:
    using Error::Error;
};

class VocabularyError : public Error {
public:
    using Error::Error;
};

class LengthError : public Error {
public:
    using Error::Error;
};

class EmptyTargetError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line) : Error(what), line_(line) {}
    [[nodiscard]] std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

class SchemaError : public Error {
public:
    SchemaError(const std::string& what, std::string field) : Error(what), field_(std::move(field)) {}
    [[nodiscard]] const std::string& field() const { return field_; }

private:
    std::string field_;
};

/// Bad command line or unknown component name; the CLI maps this to exit code 2.
class UsageError : public Error {
public:
    using Error::Error;
};

}  // namespace hdccl
