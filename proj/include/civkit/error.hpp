#pragma once

#include <stdexcept>
#include <string>

namespace civkit {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input and schema problems.
class DataError : public Error {
 public:
  using Error::Error;
};

class SchemaError : public DataError {
 public:
  using DataError::DataError;
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& what, long row) : DataError(what), row_(row) {}
  long row() const { return row_; }

 private:
  long row_;
};

class EmptyInputError : public DataError {
 public:
  using DataError::DataError;
};

class ValidationError : public DataError {
 public:
  using DataError::DataError;
};

// Argument outside an operation's domain (k = 0, unknown category code, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Numerical failures: singular designs, undefined jackknife, LIML root problems.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class RankError : public NumericalError {
 public:
  RankError(const std::string& what, double smallest_singular_value = 0.0)
      : NumericalError(what), sigma_min_(smallest_singular_value) {}
  double smallest_singular_value() const { return sigma_min_; }

 private:
  double sigma_min_;
};

class WeakInstrumentError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class JackknifeUndefinedError : public NumericalError {
 public:
  JackknifeUndefinedError(const std::string& what, std::string category)
      : NumericalError(what), category_(std::move(category)) {}
  const std::string& category() const { return category_; }

 private:
  std::string category_;
};

}  // namespace civkit
