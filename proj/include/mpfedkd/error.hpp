#pragma once

#include <stdexcept>
#include <string>

namespace mpfedkd {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

// Raised when a NaN or Inf reaches an op boundary.
class NumericError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    enum class Kind { io, bad_magic, truncated, count_mismatch, invalid_argument, partition_failed };

    DataError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

}  // namespace mpfedkd
