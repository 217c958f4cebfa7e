#pragma once

#include <stdexcept>
#include <string>

namespace nettomo {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// A relative error was requested against an all-zero truth matrix.
class DegenerateTruthError : public Error {
public:
    using Error::Error;
};

/// Some OD pair has no path in the topology.
class InfeasibleRoutingError : public Error {
public:
    using Error::Error;
};

/// An iterative solver produced a non-finite iterate.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string &what, long iteration)
        : Error(what + " (iteration " + std::to_string(iteration) + ")"),
          iteration_(iteration) {}

    long iteration() const noexcept { return iteration_; }

private:
    long iteration_;
};

/// Dense diagnostics refused an instance that is too large.
class SizeGuardError : public Error {
public:
    using Error::Error;
};

/// The true pair is not locally identifiable (direct-sum failure), or the
/// routing operator is injective when a nullspace was required.
class IdentifiabilityError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace nettomo
