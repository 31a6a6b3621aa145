#pragma once

#include <stdexcept>
#include <string>

namespace stvar {

// Invalid configuration or argument supplied by the caller.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Malformed, inconsistent, or non-finite input data.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A numerical routine failed (factorization, eigen decomposition, ...).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace stvar
