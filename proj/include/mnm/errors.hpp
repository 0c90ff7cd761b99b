#ifndef MNM_ERRORS_HPP
#define MNM_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace mnm {

/// Bad caller input: dimension mismatch, empty list, out-of-range parameter.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A numerical argument left its mathematical domain by more than the guard band.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Exterior angle is undefined for coincident points or a brain point at the origin.
class DegeneratePair : public DomainError {
public:
    using DomainError::DomainError;
};

/// Rank correlation with a constant variable.
class UndefinedCorrelation : public DomainError {
public:
    using DomainError::DomainError;
};

/// Binary container could not be parsed (magic, version, truncation).
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Container parsed but its content breaks an invariant.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace mnm

#endif
