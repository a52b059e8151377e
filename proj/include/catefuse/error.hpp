#pragma once
#include <stdexcept>
#include <string>

namespace catefuse {

/// Root of every error thrown by the library.
class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or out-of-domain input data (CSV cells, treatment codes, shapes).
class DataError : public Error
{
public:
    using Error::Error;
};

/// Invalid configuration or call arguments.
class ConfigError : public Error
{
public:
    using Error::Error;
};

/// Numerical failure: non-convergence, singular systems.
class NumericalError : public Error
{
public:
    using Error::Error;
};

/// Positivity violated: a propensity outside (0, 1).
class PositivityError : public DataError
{
public:
    using DataError::DataError;
};

} // namespace catefuse
