#pragma once

#include <stdexcept>
#include <string>

namespace mmsyn {

// Invalid configuration or command-line usage. CLI exit code 1.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed, missing or inconsistent data on disk. CLI exit code 2.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite loss or activation during optimization. CLI exit code 3.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace mmsyn
