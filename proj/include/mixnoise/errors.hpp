#pragma once

#include <stdexcept>
#include <string>

namespace mixnoise {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Inputs of incompatible sizes.
class DimensionError : public Error {
  public:
    using Error::Error;
};

/// A constructor argument violates a type invariant.
class InvariantError : public Error {
  public:
    using Error::Error;
};

/// A state or datum lies outside the set where the model is defined
/// (outside the admissible ball X', or y outside the interior of the noise
/// support). Optimizers and samplers treat this as an infinite potential.
class DomainError : public Error {
  public:
    using Error::Error;
};

/// Factorization failure, singular system, or quadrature underflow.
class NumericalError : public Error {
  public:
    using Error::Error;
};

/// Monte Carlo estimate with too few effective samples to be trusted.
class UnreliableEstimateError : public Error {
  public:
    using Error::Error;
};

/// Markov chain unable to leave its current state.
class StuckChainError : public Error {
  public:
    using Error::Error;
};

namespace detail {

inline void require_same_size(long a, long b, const char* what)
{
    if (a != b) {
        throw DimensionError(std::string(what) + ": size mismatch (" + std::to_string(a) + " vs "
                             + std::to_string(b) + ")");
    }
}

} // namespace detail
} // namespace mixnoise
