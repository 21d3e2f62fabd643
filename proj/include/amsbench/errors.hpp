#pragma once

#include <stdexcept>
#include <string>

namespace ams {

/// Base class for all errors raised by the library. The CLI maps each
/// subclass to a distinct process exit code (see tools/amsbench_main.cpp).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Invalid configuration value or unknown key. Exit code 2.
struct ConfigError : Error {
    using Error::Error;
};

/// Malformed input data (bad timestamp, wrong column count, ...). The message
/// always names the offending file and line. Exit code 3.
struct ParseError : Error {
    using Error::Error;
};

/// Filesystem problem: missing file, unwritable directory. Exit code 4.
struct IoError : Error {
    using Error::Error;
};

/// Numerical failure during training (non-finite loss or gradient). Exit code 5.
struct TrainError : Error {
    using Error::Error;
};

/// Internal invariant violation (a bug, not a user error). Exit code 6.
struct InternalError : Error {
    using Error::Error;
};

}  // namespace ams
