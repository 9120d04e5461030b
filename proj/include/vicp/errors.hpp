#pragma once

#include <stdexcept>
#include <string>

namespace vicp {

// Error taxonomy shared across the library. Each maps to one failure class
// named in the module contracts.

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

struct SamplingError : std::runtime_error {
    explicit SamplingError(const std::string& msg) : std::runtime_error("sampling error: " + msg) {}
};

struct ProtocolError : std::runtime_error {
    explicit ProtocolError(const std::string& msg) : std::runtime_error("protocol error: " + msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

struct IntegrityError : std::runtime_error {
    explicit IntegrityError(const std::string& msg) : std::runtime_error("integrity error: " + msg) {}
};

struct OracleError : std::runtime_error {
    explicit OracleError(const std::string& msg) : std::runtime_error("oracle error: " + msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error("io error: " + msg) {}
};

}  // namespace vicp
