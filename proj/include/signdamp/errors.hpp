#pragma once

#include <stdexcept>
#include <string>

namespace signdamp {

/// Argument outside the domain on which a signal or operation is defined.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Precondition on the inputs of an operation was violated.
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Non-finite value or failed numerical procedure.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The data handed to a diagnostic does not support the requested estimate.
class DiagnosticError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
    if (!cond) throw ContractError(what);
}

}  // namespace signdamp
