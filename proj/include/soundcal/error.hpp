#pragma once

#include <stdexcept>
#include <string>

namespace soundcal {

/// Base of every failure reported by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// A measurement could not be extracted from the data (tone not detected,
/// period not detected, noise dominates, ...).
class MeasurementError : public Error {
public:
    using Error::Error;
};

inline void require(bool condition, const std::string& message) {
    if (!condition) throw InvalidArgument(message);
}

}  // namespace soundcal
