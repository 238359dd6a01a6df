#ifndef INFDEF_ERRORS_HPP_
#define INFDEF_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace infdef {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A latent point lies outside the chart or density domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Chart index out of range for the manifold.
class ChartError : public Error {
 public:
  using Error::Error;
};

/// Jacobian is (numerically) rank deficient at the requested point.
class SingularityError : public Error {
 public:
  using Error::Error;
};

class UnknownDensityError : public Error {
 public:
  using Error::Error;
};

class UnknownManifoldError : public Error {
 public:
  using Error::Error;
};

/// Invalid or non-finite parameter values.
class ParamError : public Error {
 public:
  using Error::Error;
};

/// A closed-form expression is evaluated outside its range of validity.
class FormulaDomainError : public Error {
 public:
  using Error::Error;
};

/// Non-finite intermediate inside the flow; carries the offending layer.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, int layer = -1)
      : Error(what + (layer >= 0 ? " (layer " + std::to_string(layer) + ")" : "")),
        layer_(layer) {}
  int layer() const { return layer_; }

 private:
  int layer_;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

class GridMismatchError : public Error {
 public:
  using Error::Error;
};

/// Configuration file problems; `field` names the offending key path.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : Error(field.empty() ? what : field + ": " + what), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

}  // namespace infdef

#endif  // INFDEF_ERRORS_HPP_
