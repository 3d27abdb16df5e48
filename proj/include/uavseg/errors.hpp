#pragma once

#include <stdexcept>
#include <string>

namespace uavseg {

/// Caller supplied data that violates an operation's precondition.
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A record or file failed schema validation. `field()` names the offending field.
class ValidationError : public InputError {
public:
    ValidationError(std::string field, const std::string& message)
        : InputError(field + ": " + message), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Broken internal invariant (shape contract, index range).
class InternalError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(long step, const std::string& message)
        : std::runtime_error("divergence at step " + std::to_string(step) + ": " + message),
          step_(step) {}
    long step() const noexcept { return step_; }

private:
    long step_;
};

}  // namespace uavseg
