#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace splitnn {

// Base of every error the library throws. Subclasses map onto the error
// categories that callers (CLI exit codes, the server's ERROR frames)
// need to tell apart.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

// Operation called on an object in the wrong state (stale tape, missing
// gradients, ...).
class StateError : public Error {
public:
    using Error::Error;
};

class SpecError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class RangeError : public Error {
public:
    using Error::Error;
};

class InputError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class CapacityError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// A blocking network operation ran past its deadline.
class TimeoutError : public IoError {
public:
    using IoError::IoError;
};

// Peer closed or reset the connection.
class ConnectionError : public IoError {
public:
    using IoError::IoError;
};

// The server answered with an ERROR frame.
class ServerError : public Error {
public:
    ServerError(std::uint8_t code, const std::string& message)
        : Error("server error " + std::to_string(code) + ": " + message), code_(code), message_(message) {}

    std::uint8_t code() const noexcept { return code_; }
    const std::string& message() const noexcept { return message_; }

private:
    std::uint8_t code_;
    std::string message_;
};

// Malformed serialized data. `offset` is the byte position where parsing
// failed.
class DecodeError : public Error {
public:
    DecodeError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

}  // namespace splitnn
