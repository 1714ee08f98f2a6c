#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace qrcate {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A Dataset (or an input table) violates one of its invariants.
/// `kind()` is a short machine-readable tag, `row()` the offending row or -1.
class DataError : public Error {
 public:
  DataError(std::string kind, const std::string& message, std::ptrdiff_t row = -1)
      : Error(message), kind_(std::move(kind)), row_(row) {}

  const std::string& kind() const noexcept { return kind_; }
  std::ptrdiff_t row() const noexcept { return row_; }

 private:
  std::string kind_;
  std::ptrdiff_t row_;
};

class MissingColumnError : public Error {
 public:
  explicit MissingColumnError(std::string column)
      : Error("missing column '" + column + "'"), column_(std::move(column)) {}

  const std::string& column() const noexcept { return column_; }

 private:
  std::string column_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t row, std::string column, const std::string& cell)
      : Error("cannot parse '" + cell + "' at row " + std::to_string(row) + ", column '" +
              column + "'"),
        row_(row),
        column_(std::move(column)) {}

  std::size_t row() const noexcept { return row_; }
  const std::string& column() const noexcept { return column_; }

 private:
  std::size_t row_;
  std::string column_;
};

class FileError : public Error {
 public:
  explicit FileError(std::string path)
      : Error("cannot open '" + path + "'"), path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Model fitting could not proceed (empty arm, single-class labels, ...).
class FitError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace qrcate
