#pragma once

#include <stdexcept>
#include <string>

namespace mnistgen {

// User errors (bad config, flags, inputs) map to exit code 1; environment
// errors (network, provider, filesystem) map to exit code 2.
enum class ErrorKind { User, Environment };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class UserError : public Error {
public:
    explicit UserError(const std::string& what) : Error(ErrorKind::User, what) {}
};

class EnvironmentError : public Error {
public:
    explicit EnvironmentError(const std::string& what)
        : Error(ErrorKind::Environment, what) {}
};

// Provider timeouts and protocol violations; callers may retry.
class RetryableError : public EnvironmentError {
public:
    explicit RetryableError(const std::string& what) : EnvironmentError(what) {}
};

}  // namespace mnistgen
