#pragma once

#include <stdexcept>
#include <string>

namespace consol {

/// Argument of a symbolic activation falls outside the op's domain.
class DomainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Coefficient training stopped because the current iterate left the domain.
class FitError : public DomainError {
public:
    FitError(const std::string& what, int epoch)
        : DomainError(what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}
    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

/// Malformed LoCaL structure (e.g. a used product neuron with no inputs).
class StructureError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Vector or matrix dimensions do not agree.
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A statistic is undefined for the given data (zero variance, vanishing derivatives).
class DegenerateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Two independent numerical routes disagreed beyond tolerance.
class ConsistencyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An episode could not produce a constraint-valid action within the retry cap.
class EpisodeAborted : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad configuration file or missing input data.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace consol
