#pragma once

#include <stdexcept>
#include <string>

namespace rigline {

/// Base of every error the library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input text (CSV cells, model documents, spec strings).
class ParseError : public Error {
public:
    using Error::Error;
};

/// Row/feature count disagreement between two objects.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration or precondition on parameters.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Operation needs class labels (or a particular class) that are absent.
class LabelError : public Error {
public:
    using Error::Error;
};

/// Dataset has no rows where at least one is required.
class EmptyDatasetError : public Error {
public:
    using Error::Error;
};

/// Numerical failure during training (divergence, NaN).
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace rigline
