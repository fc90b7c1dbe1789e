#pragma once

#include <stdexcept>
#include <string>

namespace cgrs {

// Failure categories double as process exit codes for the CLI.
enum class ErrorCategory : int {
    config = 2,
    data = 3,
    numeric = 4,
    io = 5,
};

std::string to_string(ErrorCategory category);

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& message);

    ErrorCategory category() const noexcept { return category_; }
    int exit_code() const noexcept { return static_cast<int>(category_); }

private:
    ErrorCategory category_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& message) : Error(ErrorCategory::config, message) {}
};

// Raised when a checkpoint was written by a format this build cannot read.
class MigrationError : public ConfigError {
public:
    explicit MigrationError(const std::string& message) : ConfigError(message) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& message) : Error(ErrorCategory::data, message) {}
};

// Missing or corrupt raw archive; the message always carries the file path.
class IngestionError : public DataError {
public:
    explicit IngestionError(const std::string& message) : DataError(message) {}
};

// Stored content digest does not match the payload.
class IntegrityError : public DataError {
public:
    explicit IntegrityError(const std::string& message) : DataError(message) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& message) : Error(ErrorCategory::numeric, message) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& message) : Error(ErrorCategory::io, message) {}
};

// Programming errors: tensor shapes that violate an operation's contract.
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

}  // namespace cgrs
