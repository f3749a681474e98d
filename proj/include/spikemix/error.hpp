#pragma once

#include <stdexcept>
#include <string>

namespace spikemix {

// Base of every exception the library throws. The C API maps each subclass
// onto a distinct status code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

// A transform was asked for a length it cannot handle (non power of 2 on the
// FFT fast path, odd length at some wavelet level).
class LengthError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class BadMagicError : public FormatError {
public:
    using FormatError::FormatError;
};

class TruncatedError : public FormatError {
public:
    using FormatError::FormatError;
};

class LabelOverflowError : public FormatError {
public:
    using FormatError::FormatError;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Misuse of the tape: double backward, non-scalar loss, Heaviside inside a
// finite-difference check.
class TapeError : public Error {
public:
    using Error::Error;
};

}  // namespace spikemix
