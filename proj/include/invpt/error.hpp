#pragma once

#include <stdexcept>
#include <string>

namespace invpt {

// Error taxonomy mirrors the CLI exit codes: config -> 2, data/format -> 3,
// numerical -> 4. Dimension/argument errors are programming-contract
// violations and map to config errors when they escape to the CLI.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& msg) : Error("dimension error: " + msg) {}
};

class ArgumentError : public Error {
public:
    explicit ArgumentError(const std::string& msg) : Error("argument error: " + msg) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

class DataError : public Error {
public:
    DataError(const std::string& msg, long long byte_offset = -1)
        : Error(byte_offset >= 0 ? "data error at byte " + std::to_string(byte_offset) + ": " + msg
                                 : "data error: " + msg),
          offset(byte_offset) {}
    long long offset = -1;
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error("numerical failure: " + msg) {}
};

}  // namespace invpt
