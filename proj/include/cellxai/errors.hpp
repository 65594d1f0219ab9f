#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace cellxai {

/// Caller passed something malformed: wrong shapes, unknown keys, bad indices.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A constitutive or ramp function was evaluated outside its domain.
class DomainError : public std::domain_error {
public:
    explicit DomainError(const std::string& what, std::optional<std::size_t> increment = std::nullopt)
        : std::domain_error(increment ? what + " (increment " + std::to_string(*increment) + ")" : what),
          increment_(increment) {}

    std::optional<std::size_t> increment() const noexcept { return increment_; }

private:
    std::optional<std::size_t> increment_;
};

/// Non-finite values appeared inside a network evaluation.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A file could not be read or written.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A persisted artifact no longer matches its recorded digest.
class IntegrityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace cellxai
