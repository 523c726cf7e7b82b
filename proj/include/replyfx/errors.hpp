#pragma once

#include <stdexcept>
#include <string>

namespace replyfx {

// Base class for all pipeline errors. Subclasses distinguish user-facing
// failure modes so the CLI can map them to exit codes.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input record; carries the 1-based line number when known.
class ParseError : public Error {
public:
    ParseError(const std::string& msg, long line = -1)
        : Error(line >= 0 ? msg + " (line " + std::to_string(line) + ")" : msg), line_(line) {}
    long line() const { return line_; }

private:
    long line_;
};

// Structural violation in otherwise well-formed input (duplicate ids, dangling refs).
class IntegrityError : public Error {
public:
    using Error::Error;
};

// Caller violated an operation precondition.
class InputError : public Error {
public:
    using Error::Error;
};

// External scoring/generation service failed after retries.
class ScorerError : public Error {
public:
    ScorerError(const std::string& msg, int status = 0, int attempts = 0)
        : Error(msg), status_(status), attempts_(attempts) {}
    int status() const { return status_; }
    int attempts() const { return attempts_; }

private:
    int status_;
    int attempts_;
};

// Group sizes make the requested matching impossible.
class SizeError : public Error {
public:
    using Error::Error;
};

// Optimizer failed to converge or the model is degenerate.
class FitError : public Error {
public:
    using Error::Error;
};

// No feasible choice exists (e.g. no threshold meets the positives floor).
class InfeasibleError : public Error {
public:
    using Error::Error;
};

// Restricted sample too small for estimation.
class InsufficientSampleError : public Error {
public:
    using Error::Error;
};

// Bootstrap metric undefined on too many resamples.
class InstabilityError : public Error {
public:
    using Error::Error;
};

// Pipeline stage invoked before its inputs exist.
class DependencyError : public Error {
public:
    using Error::Error;
};

// Bad configuration file or flag combination.
class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace replyfx
