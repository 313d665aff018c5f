#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sorscn {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PreconditionViolation : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

/// Dominant eigenvalue magnitude too small to rescale; the candidate must be resampled.
class DegenerateMatrix : public Error {
 public:
  using Error::Error;
};

class WashoutTooLarge : public Error {
 public:
  using Error::Error;
};

class ZeroStateNorm : public Error {
 public:
  using Error::Error;
};

class NoCandidateFound : public Error {
 public:
  using Error::Error;
};

class ConstructionStalled : public Error {
 public:
  using Error::Error;
};

class EmptyWindow : public Error {
 public:
  using Error::Error;
};

class ZeroVariance : public Error {
 public:
  using Error::Error;
};

// Data ingestion failures (CLI exit code 2).
class DataError : public Error {
 public:
  using Error::Error;
};

class MissingColumn : public DataError {
 public:
  explicit MissingColumn(const std::string& column)
      : DataError("missing column '" + column + "'"), column_(column) {}
  const std::string& column() const { return column_; }

 private:
  std::string column_;
};

class NonNumericCell : public DataError {
 public:
  NonNumericCell(std::size_t row, std::size_t column, const std::string& text)
      : DataError("non-numeric cell at row " + std::to_string(row) + ", column " +
                  std::to_string(column) + ": '" + text + "'"),
        row_(row),
        column_(column) {}
  std::size_t row() const { return row_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t row_;
  std::size_t column_;
};

class EmptyFile : public DataError {
 public:
  using DataError::DataError;
};

// Invalid or inconsistent experiment configuration (CLI exit code 1).
class ConfigError : public Error {
 public:
  using Error::Error;
};

class VersionMismatch : public Error {
 public:
  using Error::Error;
};

class CorruptFile : public Error {
 public:
  using Error::Error;
};

}  // namespace sorscn
