#pragma once

#include <stdexcept>
#include <string>

namespace cddsa {

// Error taxonomy mirrored by the CLI exit codes: config -> 2, data -> 3,
// anything raised while running/training -> 4.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

class TrainingError : public std::runtime_error {
public:
    explicit TrainingError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace cddsa
