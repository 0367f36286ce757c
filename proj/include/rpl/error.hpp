#pragma once

#include <stdexcept>
#include <string>

namespace rpl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file or record.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration value, unknown key, or violated precondition.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Network, timeout or HTTP failure talking to an external generator.
/// Distinct from an abstaining answer.
class TransportError : public Error {
public:
    using Error::Error;
};

} // namespace rpl
