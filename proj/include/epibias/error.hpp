#pragma once

#include <stdexcept>
#include <string>

namespace epibias {

/// Bad input: malformed files, unknown identifiers, out-of-range arguments.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Failure inside a numerical routine (factorization, divergence, ...).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace epibias
