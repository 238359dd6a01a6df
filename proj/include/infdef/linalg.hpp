#ifndef INFDEF_LINALG_HPP_
#define INFDEF_LINALG_HPP_

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include "infdef/errors.hpp"

namespace infdef {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
/// Row-major sample matrix: one point per row.
using Samples = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

using Rng = std::mt19937_64;

/// Axis-aligned box; bounds may be infinite.
struct Box {
  std::vector<double> lo;
  std::vector<double> hi;

  std::size_t dim() const { return lo.size(); }

  bool contains(const Vec& u) const {
    if (static_cast<std::size_t>(u.size()) != dim()) return false;
    for (std::size_t i = 0; i < dim(); ++i) {
      if (!(u[i] >= lo[i] && u[i] <= hi[i])) return false;
    }
    return true;
  }

  bool bounded() const {
    for (std::size_t i = 0; i < dim(); ++i)
      if (!std::isfinite(lo[i]) || !std::isfinite(hi[i])) return false;
    return true;
  }

  /// Shrinks every finite bound inwards by `eps`.
  Box shrunk(double eps) const {
    Box b = *this;
    for (std::size_t i = 0; i < dim(); ++i) {
      if (std::isfinite(b.lo[i])) b.lo[i] += eps;
      if (std::isfinite(b.hi[i])) b.hi[i] -= eps;
    }
    return b;
  }
};

/// Central finite-difference step used throughout: 1e-6 * max(1, |u_i|).
inline double fd_step(double ui) { return 1e-6 * std::max(1.0, std::abs(ui)); }

/// Central-difference Jacobian of `f` at `u` (rows: outputs, cols: inputs).
inline Mat fd_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& u) {
  const Vec f0 = f(u);
  Mat J(f0.size(), u.size());
  Vec up = u, um = u;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const double h = fd_step(u[i]);
    up[i] = u[i] + h;
    um[i] = u[i] - h;
    J.col(i) = (f(up) - f(um)) / (2.0 * h);
    up[i] = um[i] = u[i];
  }
  return J;
}

/// Evenly spaced points including both endpoints.
inline std::vector<double> linspace(double a, double b, std::size_t n) {
  std::vector<double> out(n);
  if (n == 1) {
    out[0] = 0.5 * (a + b);
    return out;
  }
  for (std::size_t i = 0; i < n; ++i)
    out[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
  return out;
}

inline std::vector<double> logspace(double lo_exp, double hi_exp, std::size_t n) {
  auto e = linspace(lo_exp, hi_exp, n);
  for (auto& v : e) v = std::pow(10.0, v);
  return e;
}

/// Numerically stable log(exp(a) + exp(b)).
inline double log_add_exp(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

inline double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace infdef

#endif  // INFDEF_LINALG_HPP_
