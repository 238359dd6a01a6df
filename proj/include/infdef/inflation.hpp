#ifndef INFDEF_INFLATION_HPP_
#define INFDEF_INFLATION_HPP_

// Noise models that thicken a manifold into a full-dimensional set, their
// deflation constants q_n(x|x), and the normal-reachability checker.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "infdef/latent.hpp"
#include "infdef/manifold.hpp"

namespace infdef {

enum class NoiseKind { IsotropicGaussian, NormalGaussian, NormalChiSquared, NormalUniformBall };

struct NoiseModel {
  NoiseKind kind = NoiseKind::NormalGaussian;
  double sigma2 = 0.0;
  int dof = 0;        // chi-squared degrees of freedom k
  double tau = 0.0;   // ball radius
  /// Optional asymmetric interval [lo, hi) for codimension-1 uniform noise.
  std::optional<std::pair<double, double>> interval;
  int d = 0;
  int D = 0;

  int codim() const { return D - d; }

  /// Short config tag: iid, nid, chi2, reach_ball.
  std::string tag() const {
    switch (kind) {
      case NoiseKind::IsotropicGaussian: return "iid";
      case NoiseKind::NormalGaussian: return "nid";
      case NoiseKind::NormalChiSquared: return "chi2";
      case NoiseKind::NormalUniformBall: return "reach_ball";
    }
    return "?";
  }

  bool is_normal() const { return kind != NoiseKind::IsotropicGaussian; }

  /// Whether normal coordinates `v` lie in the support of the noise law.
  bool in_support(const Vec& v) const {
    switch (kind) {
      case NoiseKind::IsotropicGaussian:
      case NoiseKind::NormalGaussian: return v.allFinite();
      case NoiseKind::NormalChiSquared: return v.size() == 1 && v[0] >= -static_cast<double>(dof);
      case NoiseKind::NormalUniformBall:
        if (interval) return v.size() == 1 && v[0] >= interval->first && v[0] < interval->second;
        return v.norm() < tau;
    }
    return false;
  }
};

namespace detail {

inline void check_dims(int d, int D) {
  if (d < 1 || D <= d) throw ParamError("noise model needs 1 <= d < D");
}

}  // namespace detail

inline NoiseModel isotropic_gaussian(double sigma2, int d, int D) {
  detail::check_dims(d, D);
  if (!(sigma2 > 0) || !std::isfinite(sigma2)) throw ParamError("sigma2 must be positive and finite");
  return {NoiseKind::IsotropicGaussian, sigma2, 0, 0.0, {}, d, D};
}

inline NoiseModel normal_gaussian(double sigma2, int d, int D) {
  detail::check_dims(d, D);
  if (!(sigma2 > 0) || !std::isfinite(sigma2)) throw ParamError("sigma2 must be positive and finite");
  return {NoiseKind::NormalGaussian, sigma2, 0, 0.0, {}, d, D};
}

/// v = W - k with W ~ chi2_k along the outward normal; codimension 1 only.
inline NoiseModel normal_chi_squared(int k, int d, int D) {
  detail::check_dims(d, D);
  if (k < 1) throw ParamError("chi-squared degrees of freedom must be >= 1");
  if (D - d != 1) throw ParamError("chi-squared normal noise requires codimension 1");
  return {NoiseKind::NormalChiSquared, 0.0, k, 0.0, {}, d, D};
}

/// Uniform on the open (D-d)-ball of radius tau in the normal space.
inline NoiseModel normal_uniform_ball(double tau, int d, int D) {
  detail::check_dims(d, D);
  if (!(tau > 0) || !std::isfinite(tau)) throw ParamError("ball radius must be positive and finite");
  return {NoiseKind::NormalUniformBall, 0.0, 0, tau, {}, d, D};
}

/// Uniform on [lo, hi) along the outward normal; codimension 1 only.
inline NoiseModel normal_uniform_interval(double lo, double hi, int d, int D) {
  detail::check_dims(d, D);
  if (D - d != 1) throw ParamError("interval noise requires codimension 1");
  if (!(hi > lo) || !std::isfinite(lo) || !std::isfinite(hi)) throw ParamError("interval must satisfy lo < hi");
  if (!(lo <= 0.0 && hi > 0.0)) throw ParamError("interval must contain 0 (x must be in its own support)");
  NoiseModel n{NoiseKind::NormalUniformBall, 0.0, 0, 0.5 * (hi - lo), std::make_pair(lo, hi), d, D};
  return n;
}

/// log q_n(x|x).
inline double log_deflation_constant(const NoiseModel& n) {
  const double m = n.codim();
  switch (n.kind) {
    case NoiseKind::IsotropicGaussian:
    case NoiseKind::NormalGaussian: return -0.5 * m * std::log(2 * kPi * n.sigma2);
    case NoiseKind::NormalChiSquared: {
      const double k = n.dof;
      return (k / 2 - 1) * std::log(k) - k / 2 - (k / 2) * std::log(2.0) - std::lgamma(k / 2);
    }
    case NoiseKind::NormalUniformBall: {
      if (n.interval) return -std::log(n.interval->second - n.interval->first);
      return std::lgamma(m / 2 + 1) - (m / 2) * std::log(kPi) - m * std::log(n.tau);
    }
  }
  return 0.0;
}

/// q_n(x|x): the noise density at zero displacement.
inline double deflation_constant(const NoiseModel& n) { return std::exp(log_deflation_constant(n)); }

struct InflatedPoint {
  Vec x;
  Vec x_tilde;
  /// Normal coordinates (D - d) for normal kinds, ambient displacement (D) for isotropic.
  Vec v;
};

/// Draws the noise coordinates from an existing generator.
inline Vec draw_noise_coordinates(const NoiseModel& n, Rng& rng) {
  const int m = n.kind == NoiseKind::IsotropicGaussian ? n.D : n.codim();
  Vec v(m);
  switch (n.kind) {
    case NoiseKind::IsotropicGaussian:
    case NoiseKind::NormalGaussian: {
      std::normal_distribution<double> g(0.0, std::sqrt(n.sigma2));
      for (int i = 0; i < m; ++i) v[i] = g(rng);
      break;
    }
    case NoiseKind::NormalChiSquared: {
      std::chi_squared_distribution<double> c(n.dof);
      v[0] = c(rng) - n.dof;
      break;
    }
    case NoiseKind::NormalUniformBall: {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      if (n.interval) {
        v[0] = n.interval->first + (n.interval->second - n.interval->first) * u(rng);
        break;
      }
      std::normal_distribution<double> g(0.0, 1.0);
      for (int i = 0; i < m; ++i) v[i] = g(rng);
      const double r = n.tau * std::pow(u(rng), 1.0 / m);
      v *= r / v.norm();
      break;
    }
  }
  return v;
}

/// One inflated point x_tilde = f(u) + A_u v (normal kinds) or f(u) + eps (isotropic).
inline InflatedPoint inflate(const NoiseModel& noise, const ManifoldSpec& m, std::size_t chart_index,
                             const Vec& u, std::uint64_t seed) {
  if (noise.d != m.d || noise.D != m.D) throw ParamError("noise model dimensions do not match manifold");
  Rng rng(seed);
  InflatedPoint p;
  p.x = embed(m, chart_index, u);
  p.v = draw_noise_coordinates(noise, rng);
  if (noise.kind == NoiseKind::IsotropicGaussian) {
    p.x_tilde = p.x + p.v;
  } else {
    const NormalFrame frame = normal_frame(m, chart_index, u);
    p.x_tilde = p.x + frame.columns * p.v;
  }
  return p;
}

/// Inflates a batch of latent samples; row i uses seed base_seed + i.
inline Samples inflate_batch(const NoiseModel& noise, const ManifoldSpec& m, const Samples& latent,
                             std::uint64_t base_seed) {
  Samples out(latent.rows(), m.D);
  for (Eigen::Index i = 0; i < latent.rows(); ++i) {
    const Vec u = latent.row(i).transpose();
    const auto p = inflate(noise, m, m.select_chart(u), u, base_seed + static_cast<std::uint64_t>(i));
    out.row(i) = p.x_tilde.transpose();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Isotropic versus normal noise
// ---------------------------------------------------------------------------

/// E[|eps_t|^2 / |eps_n|^2] = d / (D - d - 2) for isotropic Gaussian eps.
inline double gaussian_vs_normal_error(int d, int D) {
  if (D - d <= 2)
    throw FormulaDomainError("relative tangential error diverges for D - d <= 2 (d = " + std::to_string(d) +
                             ", D = " + std::to_string(D) + ")");
  return static_cast<double>(d) / (D - d - 2);
}

struct MonteCarloEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t n = 0;
};

/// Monte-Carlo mean of |eps_t|^2 / |eps_n|^2 using the manifold's normal frame at u.
inline MonteCarloEstimate gaussian_vs_normal_error_mc(const ManifoldSpec& m, std::size_t chart_index,
                                                     const Vec& u, double sigma2, std::size_t n_samples,
                                                     std::uint64_t seed) {
  gaussian_vs_normal_error(m.d, m.D);
  if (!(sigma2 > 0)) throw ParamError("sigma2 must be positive");
  const NormalFrame frame = normal_frame(m, chart_index, u);
  const Mat& A = frame.columns;
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, std::sqrt(sigma2));
  Vec eps(m.D);
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t s = 0; s < n_samples; ++s) {
    for (int i = 0; i < m.D; ++i) eps[i] = g(rng);
    const Vec en = A * (A.transpose() * eps);
    const Vec et = eps - en;
    const double r = et.squaredNorm() / en.squaredNorm();
    sum += r;
    sum_sq += r * r;
  }
  const double nn = static_cast<double>(n_samples);
  const double mean = sum / nn;
  const double var = std::max(0.0, (sum_sq - nn * mean * mean) / (nn - 1));
  return {mean, std::sqrt(var / nn), n_samples};
}

// ---------------------------------------------------------------------------
// Normal reachability
// ---------------------------------------------------------------------------

struct Generator {
  std::size_t chart_index = 0;
  Vec u;
  /// Normal coordinates of x_tilde - f(u) in the frame at u.
  Vec v;
  double distance = 0.0;
};

struct GeneratorOptions {
  /// Relative tolerance on the tangential residual for accepting a foot point.
  double stationarity_tolerance = 1e-8;
  /// Ambient distance under which two generators are the same point (tau_eq).
  double tie_tolerance = 1e-3;
  int newton_steps = 30;
  std::vector<Box> grid_boxes;
};

namespace detail {

inline Vec tangential_gradient(const ChartSpec& c, const Vec& u, const Vec& target) {
  const Mat J = c.analytic_jacobian ? c.analytic_jacobian(u) : fd_jacobian(c.map, u);
  return J.transpose() * (c.map(u) - target);
}

/// Newton iteration for J(u)^T (f(u) - x) = 0; converges to any critical point
/// of the squared distance (minima, maxima and saddles alike).
inline std::optional<Vec> solve_foot_point(const ChartSpec& c, Vec u, const Vec& target,
                                           const GeneratorOptions& opt) {
  const Box& dom = c.domain;
  for (int it = 0; it < opt.newton_steps; ++it) {
    const Vec g = tangential_gradient(c, u, target);
    const Mat J = c.analytic_jacobian ? c.analytic_jacobian(u) : fd_jacobian(c.map, u);
    const double scale = std::max(1.0, (c.map(u) - target).norm()) * std::max(1.0, J.norm());
    if (g.norm() <= opt.stationarity_tolerance * scale) return u;
    Mat H(u.size(), u.size());
    for (Eigen::Index j = 0; j < u.size(); ++j) {
      const double h = 1e-6 * std::max(1.0, std::abs(u[j]));
      Vec up = u, um = u;
      up[j] += h;
      um[j] -= h;
      H.col(j) = (tangential_gradient(c, up, target) - tangential_gradient(c, um, target)) / (2 * h);
    }
    const Vec step = H.fullPivLu().solve(g);
    if (!step.allFinite()) return std::nullopt;
    u = clamp_to(dom, u - step);
  }
  const Vec g = tangential_gradient(c, u, target);
  const Mat J = c.analytic_jacobian ? c.analytic_jacobian(u) : fd_jacobian(c.map, u);
  const double scale = std::max(1.0, (c.map(u) - target).norm()) * std::max(1.0, J.norm());
  if (g.norm() <= 1e3 * opt.stationarity_tolerance * scale) return u;
  return std::nullopt;
}

}  // namespace detail

/// All on-manifold points x' whose noise support contains x_tilde.
///
/// Candidates are critical points of u -> |f(u) - x_tilde|^2 (x_tilde - f(u)
/// normal to the manifold), seeded from local minima of the tangential
/// residual on a latent grid and polished by Newton's method. A candidate is a
/// generator when its normal coordinates lie in the noise support.
inline std::vector<Generator> generators(const ManifoldSpec& m, const NoiseModel& noise, const Vec& x_tilde,
                                         int grid_resolution, const GeneratorOptions& opt = {}) {
  if (grid_resolution < 16) throw ParamError("generator search needs grid_resolution >= 16");
  std::vector<Generator> out;
  for (std::size_t ci = 0; ci < m.charts.size(); ++ci) {
    const auto& c = m.charts[ci];
    const Box& box = opt.grid_boxes.empty() ? c.grid_domain : opt.grid_boxes.at(ci);
    const auto pts = detail::grid_points(box, grid_resolution);
    std::vector<double> resid(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const Mat J = c.analytic_jacobian ? c.analytic_jacobian(pts[i]) : fd_jacobian(c.map, pts[i]);
      const Vec r = c.map(pts[i]) - x_tilde;
      const double jn = J.norm();
      resid[i] = jn > 0 ? (J.transpose() * r).norm() / jn : kInf;
    }
    const int d = m.d;
    std::vector<std::size_t> stride(d, 1);
    for (int a = d - 2; a >= 0; --a) stride[a] = stride[a + 1] * grid_resolution;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      bool is_min = true;
      for (int a = 0; a < d && is_min; ++a) {
        const std::size_t coord = (i / stride[a]) % grid_resolution;
        if (coord > 0 && resid[i - stride[a]] < resid[i]) is_min = false;
        if (coord + 1 < static_cast<std::size_t>(grid_resolution) && resid[i + stride[a]] < resid[i]) is_min = false;
      }
      if (!is_min) continue;
      auto sol = detail::solve_foot_point(c, pts[i], x_tilde, opt);
      if (!sol) continue;
      const Vec& u = *sol;
      const Vec fu = c.map(u);
      Generator g;
      g.chart_index = ci;
      g.u = u;
      g.distance = (fu - x_tilde).norm();
      bool duplicate = false;
      for (const auto& kept : out)
        if ((m.charts[kept.chart_index].map(kept.u) - fu).norm() < opt.tie_tolerance) duplicate = true;
      if (duplicate) continue;
      try {
        const NormalFrame frame = normal_frame(m, ci, u);
        g.v = frame.columns.transpose() * (x_tilde - fu);
      } catch (const SingularityError&) {
        continue;
      }
      if (noise.in_support(g.v)) out.push_back(std::move(g));
    }
  }
  return out;
}

struct ReachabilityExample {
  Vec x_tilde;
  std::vector<Generator> generators;
};

struct ReachabilityReport {
  double violation_fraction = 0.0;
  std::size_t n_probes = 0;
  std::size_t n_violations = 0;
  std::vector<ReachabilityExample> examples;
};

/// Fraction of inflated probes with more than one generator.
inline ReachabilityReport reachability_check(const ManifoldSpec& m, const NoiseModel& noise,
                                             const LatentDensity& latent, std::size_t n_probes,
                                             int grid_resolution, std::uint64_t seed,
                                             const GeneratorOptions& opt = {}) {
  if (n_probes < 100) throw ParamError("reachability_check needs n_probes >= 100");
  if (noise.kind == NoiseKind::IsotropicGaussian)
    throw ParamError("reachability is defined for normal-space noise models");
  const Samples us = latent.sample(n_probes, seed);
  ReachabilityReport rep;
  rep.n_probes = n_probes;
  for (std::size_t i = 0; i < n_probes; ++i) {
    const Vec u = us.row(static_cast<Eigen::Index>(i)).transpose();
    const std::size_t ci = m.select_chart(u);
    InflatedPoint p;
    try {
      p = inflate(noise, m, ci, u, seed + 0x9E3779B97F4A7C15ULL + i);
    } catch (const SingularityError&) {
      continue;
    }
    auto gens = generators(m, noise, p.x_tilde, grid_resolution, opt);
    // The drawing generator is always a generator; make sure it is counted.
    bool own = false;
    for (const auto& g : gens)
      if ((m.charts[g.chart_index].map(g.u) - p.x).norm() < opt.tie_tolerance) own = true;
    const std::size_t count = gens.size() + (own ? 0 : 1);
    if (count > 1) {
      ++rep.n_violations;
      if (rep.examples.size() < 10) rep.examples.push_back({p.x_tilde, gens});
    }
  }
  rep.violation_fraction = static_cast<double>(rep.n_violations) / static_cast<double>(n_probes);
  return rep;
}

}  // namespace infdef

#endif  // INFDEF_INFLATION_HPP_
