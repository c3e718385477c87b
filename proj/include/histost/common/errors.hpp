// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace histost {

/// Precondition or shape contract broken by the caller.
class ContractViolation : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Input file parsed but its content is malformed.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A file could not be opened, read or written.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Keyed lookup for an id that does not exist.
class LookupError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

/// NaN/Inf, divergence, singular systems.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input is well-formed but the requested computation is undefined on it.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

#define HISTOST_REQUIRE(cond, msg)                                   \
    do {                                                             \
        if (!(cond)) throw ::histost::ContractViolation(msg);        \
    } while (0)

}  // namespace histost
