#pragma once

#include <stdexcept>
#include <string>

namespace dynrec {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimMismatch : Error {
    using Error::Error;
};

struct InvalidDims : Error {
    using Error::Error;
};

struct ConvergenceFailure : Error {
    using Error::Error;
};

struct EmptyWindow : Error {
    using Error::Error;
};

struct UnsupportedFamily : Error {
    using Error::Error;
};

struct EmptyGrid : Error {
    using Error::Error;
};

struct IndexOutOfRange : Error {
    using Error::Error;
};

struct DegenerateFit : Error {
    using Error::Error;
};

struct EmptyBin : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

struct ParseError : Error {
    ParseError(const std::string& what, long line)
        : Error(what + " (line " + std::to_string(line) + ")"), line_number(line) {}
    long line_number;
};

} // namespace dynrec
