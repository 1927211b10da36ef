#pragma once

#include <stdexcept>
#include <string>

namespace gnssfuse {

/// Input outside the domain of an operation (non-positive dt, elevation <= 0, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Degenerate satellite/receiver geometry (too few satellites, singular normal matrix, zero range).
class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite residual or cost.
class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The nonlinear least-squares solver could not make progress.
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical failure inside a filter update.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gnssfuse
