#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace growth {

// Base of every error thrown by the library. Callers that only need a
// diagnostic can catch this; the subclasses carry structured context.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FileNotFound : public Error {
 public:
  explicit FileNotFound(const std::string& path);
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

class SchemaError : public Error {
 public:
  SchemaError(std::size_t row, std::string column, std::string reason);
  std::size_t row() const { return row_; }
  const std::string& column() const { return column_; }
  const std::string& reason() const { return reason_; }

 private:
  std::size_t row_;
  std::string column_;
  std::string reason_;
};

class EmptyCohort : public Error {
 public:
  EmptyCohort() : Error("cohort contains no individuals") {}
};

class InvalidSplitSize : public Error {
 public:
  using Error::Error;
};

class DegenerateSpec : public Error {
 public:
  using Error::Error;
};

class NonPositiveParam : public Error {
 public:
  using Error::Error;
};

class NotPositiveDefinite : public Error {
 public:
  using Error::Error;
};

class OptimizationDiverged : public Error {
 public:
  using Error::Error;
};

class TargetOutOfRange : public Error {
 public:
  using Error::Error;
};

class InsufficientPoints : public Error {
 public:
  InsufficientPoints(std::size_t have, std::size_t need);
  std::size_t have() const { return have_; }
  std::size_t need() const { return need_; }

 private:
  std::size_t have_;
  std::size_t need_;
};

class UnknownIndividual : public Error {
 public:
  explicit UnknownIndividual(const std::string& id)
      : Error("unknown individual: " + id) {}
};

class NoTestingPoints : public Error {
 public:
  explicit NoTestingPoints(const std::string& id)
      : Error("no testing points for individual " + id) {}
};

class TargetAgeMissing : public Error {
 public:
  using Error::Error;
};

class MissingStatus : public Error {
 public:
  explicit MissingStatus(const std::string& id)
      : Error("no observed status for individual " + id) {}
};

}  // namespace growth
