#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace mlfm {

// All library failures derive from Error and carry a stable machine-readable
// code ("structural", "domain", "numerical", "dense_cap", "io") used by the
// CLI's JSON error reporting.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

// Inputs whose shape/nesting contradicts the declared structure.
class StructuralError : public Error {
public:
    explicit StructuralError(const std::string& message) : Error("structural", message) {}
};

// Values outside the mathematical domain (nonpositive variances, singular inputs).
class DomainError : public Error {
public:
    explicit DomainError(const std::string& message) : Error("domain", message) {}
};

// Analytically impossible numerical states (signals NaN/overflow upstream).
class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& message) : Error("numerical", message) {}
};

// Dense materialization refused because the matrix exceeds the configured cap.
class DenseCapError : public Error {
public:
    explicit DenseCapError(const std::string& message) : Error("dense_cap", message) {}
};

// File parsing / serialization failures.
class IoError : public Error {
public:
    explicit IoError(const std::string& message) : Error("io", message) {}
};

}  // namespace mlfm
