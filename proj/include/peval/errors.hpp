#pragma once

#include <stdexcept>
#include <string>

namespace peval {

// Bad or inconsistent user input (config file, constructor arguments).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// A numerical routine failed to meet its own convergence contract.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace peval
