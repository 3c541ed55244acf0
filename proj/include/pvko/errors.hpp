#pragma once

#include <stdexcept>
#include <string>

namespace pvko {

/// Base class of every error raised by the library.
class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Malformed arguments: dimension mismatches, empty inputs, broken preconditions.
class InvalidArgument : public Error
{
public:
  using Error::Error;
};

/// Configuration or file-content problems (schema violations, unparsable CSV/JSON).
class ConfigError : public Error
{
public:
  using Error::Error;
};

/// File system failures.
class IoError : public Error
{
public:
  using Error::Error;
};

/// Numerical failures that are properties of the problem instance rather than of the input format.
class NumericalError : public Error
{
public:
  using Error::Error;
};

class RankDeficient : public NumericalError
{
public:
  using NumericalError::NumericalError;
};

class EmptyTightenedSet : public NumericalError
{
public:
  EmptyTightenedSet(const std::string & what, int row) : NumericalError(what), row_(row) {}
  int row() const { return row_; }

private:
  int row_;
};

class NotContractive : public NumericalError
{
public:
  using NumericalError::NumericalError;
};

class QuadraticStabilityFailure : public NumericalError
{
public:
  QuadraticStabilityFailure(const std::string & what, int vertex)
      : NumericalError(what), vertex_(vertex)
  {}
  /// Index of the vertex with the largest certificate violation.
  int vertex() const { return vertex_; }

private:
  int vertex_;
};

class SolverStall : public NumericalError
{
public:
  using NumericalError::NumericalError;
};

class InitialInfeasibility : public NumericalError
{
public:
  using NumericalError::NumericalError;
};

}  // namespace pvko
