#pragma once

#include <stdexcept>
#include <string>

namespace uq {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the domain of an operation (x outside the support,
/// parameter outside Theta, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A numerical quantity came out non-finite.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Relative entropy is infinite: p_eta vanishes where p_theta does not.
class DivergenceInfiniteError : public Error {
 public:
  using Error::Error;
};

/// Malformed serialized data (wire streams, codebook files, headers).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A request exceeds a hard size cap (brute-force enumeration, materialization).
class CapacityError : public Error {
 public:
  using Error::Error;
};

/// Invalid experiment or family configuration. The message names the field.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : Error(field + ": " + what), field_(field) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Not enough data for a statistical fit.
class AnalysisError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace uq
