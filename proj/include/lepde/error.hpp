#pragma once

#include <stdexcept>
#include <string>

namespace lepde {

/// Base for all errors raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class ShapeMismatch : public Error {
public:
    using Error::Error;
};

/// A solver or optimizer produced NaN/Inf.
class NonFiniteError : public Error {
public:
    using Error::Error;
};

class VersionMismatch : public Error {
public:
    using Error::Error;
};

class SchemaMismatch : public Error {
public:
    using Error::Error;
};

class TruncatedPayload : public Error {
public:
    using Error::Error;
};

class ConfigHashMismatch : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Warnings go to stderr unless silenced; the counter lets tests observe them.
void warn(const std::string& msg);
long warning_count();
void set_warnings_quiet(bool quiet);

}  // namespace lepde
