#pragma once

#include <stdexcept>
#include <string>

namespace levcool {

// Invalid inputs or configuration. Maps to CLI exit code 2.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Numerical failure of any kind. Maps to CLI exit code 3.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class SingularityError : public NumericalError {
public:
    SingularityError(const std::string& what, double omega)
        : NumericalError(what), omega_(omega) {}
    double omega() const { return omega_; }

private:
    double omega_;
};

class DivergenceError : public NumericalError {
public:
    DivergenceError(const std::string& what, double onset_s)
        : NumericalError(what), onset_s_(onset_s) {}
    double onset_time() const { return onset_s_; }

private:
    double onset_s_;
};

class ResolutionError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class UnphysicalModelError : public NumericalError {
public:
    UnphysicalModelError(const std::string& what, double worst_omega)
        : NumericalError(what), worst_omega_(worst_omega) {}
    double worst_omega() const { return worst_omega_; }

private:
    double worst_omega_;
};

class LowSnrError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class NonConvergenceError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class UnstableLoopError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

// File system problems. Maps to CLI exit code 4.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace levcool
