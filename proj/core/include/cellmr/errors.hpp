#pragma once

#include <stdexcept>
#include <string>

namespace cellmr {

// Base class for all recoverable errors raised by the library.  The CLI maps
// these to exit code 2; anything else escaping is a bug.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class EmptyInputError : public Error {
public:
  using Error::Error;
};

class NonFiniteInputError : public Error {
public:
  using Error::Error;
};

class DimensionMismatchError : public Error {
public:
  using Error::Error;
};

class DegenerateColumnError : public Error {
public:
  DegenerateColumnError(const std::string& msg, int column)
      : Error(msg), column_(column) {}
  int column() const { return column_; }

private:
  int column_ = -1;
};

class AllMissingRowError : public Error {
public:
  AllMissingRowError(const std::string& msg, long row) : Error(msg), row_(row) {}
  long row() const { return row_; }

private:
  long row_ = -1;
};

class AllMissingPointError : public Error {
public:
  using Error::Error;
};

class RankTooLargeError : public Error {
public:
  using Error::Error;
};

class TooFewPointsError : public Error {
public:
  using Error::Error;
};

class SingularSubsetError : public Error {
public:
  using Error::Error;
};

class NormalizerZeroError : public Error {
public:
  using Error::Error;
};

class SingularSystemError : public Error {
public:
  using Error::Error;
};

class SingularCovarianceError : public Error {
public:
  using Error::Error;
};

class FoldTooSmallError : public Error {
public:
  using Error::Error;
};

class NonFiniteIterateError : public Error {
public:
  using Error::Error;
};

class InvalidConfigError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

}  // namespace cellmr
