#pragma once

#include <stdexcept>
#include <string>

namespace mtdsense {

// Malformed input file (bad JSON, wrong types).
class ParseError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Well-formed input that violates a model or allocation invariant.
class ValidationError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

class IoError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Raised by the LP/MILP/MDP solvers: numerical failure, non-convergence,
/// singular systems and failed post-hoc certificates.
class SolverError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

}  // namespace mtdsense
