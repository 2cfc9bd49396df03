#pragma once

#include <stdexcept>
#include <string>

namespace backscan {

// Base class for everything thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A domain invariant or precondition was violated by caller-supplied data.
struct ValidationError : Error {
    using Error::Error;
};

// A file could not be opened, read or written.
struct IoError : Error {
    using Error::Error;
};

// A file exists but its contents do not match the expected format.
struct FormatError : Error {
    using Error::Error;
};

// A numerical routine received data it cannot work with (degenerate
// covariance, too few samples, diverging training loss, ...).
struct NumericalError : Error {
    using Error::Error;
};

}  // namespace backscan
