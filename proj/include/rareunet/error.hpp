#ifndef RAREUNET_ERROR_HPP
#define RAREUNET_ERROR_HPP

#include <stdexcept>
#include <string>

namespace rareunet {

// Base of every error the library throws. Subclasses name the failure class
// so callers (and the CLI's exit-code mapping) can tell them apart.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

// Violated call preconditions (non-scalar loss, missing gradient, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class TrainingError : public Error {
public:
    using Error::Error;
};

}  // namespace rareunet

#endif  // RAREUNET_ERROR_HPP
