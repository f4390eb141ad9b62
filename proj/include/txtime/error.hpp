#pragma once

#include <stdexcept>
#include <string>

namespace txtime {

// Error categories map one-to-one onto CLI exit codes.
enum class ErrorKind { config = 2, data = 3, protocol = 4 };

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

  private:
    ErrorKind kind_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

struct DataError : Error {
    explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

struct ProtocolError : Error {
    explicit ProtocolError(const std::string& what) : Error(ErrorKind::protocol, what) {}
};

// Input file could not be parsed; `line` is 1-based.
struct ParseError : DataError {
    ParseError(const std::string& file, std::size_t line, const std::string& detail)
        : DataError(file + ":" + std::to_string(line) + ": " + detail), line(line) {}
    std::size_t line;
};

struct IntegrityError : DataError {
    using DataError::DataError;
};

struct TimestampOrderError : DataError {
    using DataError::DataError;
};

struct UndefinedCorrelationError : DataError {
    using DataError::DataError;
};

struct SingularDesignError : DataError {
    using DataError::DataError;
};

struct ModelIntegrityError : DataError {
    using DataError::DataError;
};

struct TransformError : DataError {
    using DataError::DataError;
};

}  // namespace txtime
