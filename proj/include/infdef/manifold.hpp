#ifndef INFDEF_MANIFOLD_HPP_
#define INFDEF_MANIFOLD_HPP_

// Embedded manifolds given by explicit charts f: U ⊂ R^d -> R^D, together with
// the first-order geometry needed for inflation and deflation.

#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "infdef/linalg.hpp"

namespace infdef {

struct ChartSpec {
  Box domain;
  std::function<Vec(const Vec&)> map;
  /// Optional analytic D x d Jacobian.
  std::function<Mat(const Vec&)> analytic_jacobian;
  /// Optional analytic sqrt(det G).
  std::function<double(const Vec&)> analytic_sqrt_gram;
  /// Finite box used when the chart has to be gridded (unbounded axes truncated).
  Box grid_domain;
  /// Optional left inverse of `map` for points on the chart's image.
  std::function<Vec(const Vec&)> inverse;
};

struct ManifoldSpec {
  std::string name;
  int d = 0;
  int D = 0;
  std::vector<ChartSpec> charts;
  /// Routes a latent point to a chart index (multi-chart manifolds only).
  std::function<std::size_t(const Vec&)> chart_selector;

  const ChartSpec& chart(std::size_t index) const {
    if (index >= charts.size())
      throw ChartError("chart index " + std::to_string(index) + " out of range for '" + name +
                       "' (" + std::to_string(charts.size()) + " charts)");
    return charts[index];
  }

  std::size_t select_chart(const Vec& u) const {
    return chart_selector ? chart_selector(u) : 0;
  }
};

struct NormalFrame {
  Vec base_point;
  /// D x (D - d), orthonormal columns spanning the normal space.
  Mat columns;
};

namespace detail {

inline void check_domain(const ChartSpec& c, const Vec& u) {
  if (!c.domain.contains(u)) {
    std::ostringstream os;
    os << "latent point (" << u.transpose() << ") outside chart domain";
    throw DomainError(os.str());
  }
}

}  // namespace detail

inline Vec embed(const ManifoldSpec& m, std::size_t chart_index, const Vec& u) {
  const auto& c = m.chart(chart_index);
  detail::check_domain(c, u);
  return c.map(u);
}

/// Analytic Jacobian when the chart provides one, central differences otherwise.
inline Mat jacobian(const ManifoldSpec& m, std::size_t chart_index, const Vec& u) {
  const auto& c = m.chart(chart_index);
  detail::check_domain(c, u);
  if (c.analytic_jacobian) return c.analytic_jacobian(u);
  return fd_jacobian(c.map, u);
}

inline Mat fd_chart_jacobian(const ManifoldSpec& m, std::size_t chart_index, const Vec& u) {
  const auto& c = m.chart(chart_index);
  detail::check_domain(c, u);
  return fd_jacobian(c.map, u);
}

inline constexpr double kSingularGramTol = 1e-14;

/// det(J^T J); throws SingularityError when it drops to 1e-14 or below.
inline double gram_det(const ManifoldSpec& m, std::size_t chart_index, const Vec& u) {
  const Mat J = jacobian(m, chart_index, u);
  const double g = (J.transpose() * J).determinant();
  if (!(g > kSingularGramTol)) {
    std::ostringstream os;
    os << "degenerate chart of '" << m.name << "' at u = (" << u.transpose() << "), det G = " << g;
    throw SingularityError(os.str());
  }
  return g;
}

/// Orthonormal basis of the normal space at f(u).
///
/// The Jacobian columns are completed with the D - d standard basis vectors
/// least aligned with the tangent space and orthonormalised (two passes of
/// modified Gram-Schmidt). The first column is oriented away from the origin
/// when that direction is well defined.
inline NormalFrame normal_frame(const ManifoldSpec& m, std::size_t chart_index, const Vec& u) {
  gram_det(m, chart_index, u);  // rank check
  const Mat J = jacobian(m, chart_index, u);
  const Vec x = m.chart(chart_index).map(u);
  const int D = m.D, d = m.d;

  Eigen::HouseholderQR<Mat> qr(J);
  const Mat Q = qr.householderQ() * Mat::Identity(D, d);

  std::vector<int> order(D);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return Q.row(a).squaredNorm() < Q.row(b).squaredNorm();
  });

  Mat basis(D, D);
  basis.leftCols(d) = Q;
  for (int k = 0; k < D - d; ++k) {
    Vec v = Vec::Zero(D);
    v[order[k]] = 1.0;
    for (int pass = 0; pass < 2; ++pass) {
      for (int j = 0; j < d + k; ++j) v -= basis.col(j).dot(v) * basis.col(j);
    }
    const double n = v.norm();
    if (n < 1e-12) throw SingularityError("normal frame completion failed for '" + m.name + "'");
    basis.col(d + k) = v / n;
  }

  NormalFrame frame{x, basis.rightCols(D - d)};
  const double radial = frame.columns.col(0).dot(x);
  if (radial < -1e-12 * std::max(1.0, x.norm())) frame.columns.col(0) *= -1.0;
  return frame;
}

struct NearestPointOptions {
  double tie_tolerance = 1e-3;    // tau_eq, ambient distance
  double merge_tolerance = 1e-4;  // latent distance
  int descent_steps = 50;
  /// Overrides the per-chart grid box (one entry per chart) when non-empty.
  std::vector<Box> grid_boxes;
};

struct NearestPointCandidate {
  std::size_t chart_index = 0;
  Vec u;
  double distance = 0.0;
};

namespace detail {

/// Tensor grid over a finite box, `res` points per axis, row-major indexing.
inline std::vector<Vec> grid_points(const Box& box, int res) {
  const auto d = box.dim();
  std::vector<std::vector<double>> axes(d);
  for (std::size_t i = 0; i < d; ++i) axes[i] = linspace(box.lo[i], box.hi[i], res);
  std::size_t total = 1;
  for (std::size_t i = 0; i < d; ++i) total *= static_cast<std::size_t>(res);
  std::vector<Vec> pts(total, Vec(static_cast<Eigen::Index>(d)));
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t rem = flat;
    for (std::size_t i = d; i-- > 0;) {
      pts[flat][static_cast<Eigen::Index>(i)] = axes[i][rem % res];
      rem /= res;
    }
  }
  return pts;
}

inline Vec clamp_to(const Box& box, Vec u) {
  for (std::size_t i = 0; i < box.dim(); ++i)
    u[static_cast<Eigen::Index>(i)] = std::clamp(u[static_cast<Eigen::Index>(i)], box.lo[i], box.hi[i]);
  return u;
}

/// Damped Gauss-Newton on |f(u) - x|^2 with projection onto the chart domain.
inline Vec refine_foot_point(const ChartSpec& c, const Box& box, Vec u, const Vec& target,
                             int steps) {
  auto obj = [&](const Vec& v) { return (c.map(v) - target).squaredNorm(); };
  double cur = obj(u);
  for (int it = 0; it < steps; ++it) {
    const Mat J = c.analytic_jacobian ? c.analytic_jacobian(u) : fd_jacobian(c.map, u);
    const Vec r = c.map(u) - target;
    const Vec g = J.transpose() * r;
    if (g.norm() < 1e-15) break;
    const Mat JtJ = J.transpose() * J;
    Vec step = JtJ.ldlt().solve(g);
    if (!step.allFinite()) step = g / std::max(JtJ.trace(), 1e-12);
    double alpha = 1.0;
    bool moved = false;
    for (int bt = 0; bt < 30; ++bt) {
      Vec cand = clamp_to(box, u - alpha * step);
      const double val = obj(cand);
      if (val < cur) {
        u = cand;
        cur = val;
        moved = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!moved) break;
  }
  return u;
}

}  // namespace detail

/// Minimum-distance foot points of `x_tilde` on the manifold.
///
/// A dense latent grid (grid_resolution per axis and chart) is scanned for
/// local minima of the distance, each minimum is refined by descent, nearby
/// candidates are merged, and every candidate within `tie_tolerance` of the
/// best distance is returned.
inline std::vector<NearestPointCandidate> nearest_point(const ManifoldSpec& m, const Vec& x_tilde,
                                                        int grid_resolution,
                                                        const NearestPointOptions& opt = {}) {
  if (grid_resolution < 16) throw ParamError("nearest_point needs grid_resolution >= 16");
  std::vector<NearestPointCandidate> cands;
  for (std::size_t ci = 0; ci < m.charts.size(); ++ci) {
    const auto& c = m.charts[ci];
    const Box& box = opt.grid_boxes.empty() ? c.grid_domain : opt.grid_boxes.at(ci);
    const auto pts = detail::grid_points(box, grid_resolution);
    std::vector<double> dist(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) dist[i] = (c.map(pts[i]) - x_tilde).norm();

    const int d = m.d;
    std::vector<std::size_t> stride(d, 1);
    for (int a = d - 2; a >= 0; --a) stride[a] = stride[a + 1] * grid_resolution;

    std::vector<NearestPointCandidate> local;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      bool is_min = true;
      for (int a = 0; a < d && is_min; ++a) {
        const std::size_t coord = (i / stride[a]) % grid_resolution;
        if (coord > 0 && dist[i - stride[a]] < dist[i]) is_min = false;
        if (coord + 1 < static_cast<std::size_t>(grid_resolution) && dist[i + stride[a]] < dist[i])
          is_min = false;
      }
      if (!is_min) continue;
      Vec u = detail::refine_foot_point(c, box, pts[i], x_tilde, opt.descent_steps);
      local.push_back({ci, u, (c.map(u) - x_tilde).norm()});
    }
    for (auto& cand : local) {
      bool merged = false;
      for (auto& kept : cands) {
        if (kept.chart_index == cand.chart_index && (kept.u - cand.u).norm() < opt.merge_tolerance) {
          if (cand.distance < kept.distance) kept = cand;
          merged = true;
          break;
        }
      }
      if (!merged) cands.push_back(cand);
    }
  }
  double best = kInf;
  for (const auto& c : cands) best = std::min(best, c.distance);
  std::vector<NearestPointCandidate> out;
  for (const auto& c : cands)
    if (c.distance <= best + opt.tie_tolerance) out.push_back(c);
  return out;
}

// ---------------------------------------------------------------------------
// Manifold zoo
// ---------------------------------------------------------------------------

namespace zoo {

/// Angle wrapped into [0, 2 pi).
inline double wrap_2pi(double a) { return a < 0 ? a + 2 * kPi : a; }

/// Circle of radius r, optionally padded with zeros up to dimension D.
inline ManifoldSpec circle(double r = 3.0, int D = 2) {
  if (D < 2) throw ParamError("circle embedding dimension must be >= 2");
  if (!(r > 0) || !std::isfinite(r)) throw ParamError("circle radius must be positive");
  ChartSpec c;
  c.domain = {{-kPi}, {kPi}};
  c.grid_domain = c.domain;
  c.map = [r, D](const Vec& u) {
    Vec x = Vec::Zero(D);
    x[0] = r * std::cos(u[0]);
    x[1] = r * std::sin(u[0]);
    return x;
  };
  c.analytic_jacobian = [r, D](const Vec& u) {
    Mat J = Mat::Zero(D, 1);
    J(0, 0) = -r * std::sin(u[0]);
    J(1, 0) = r * std::cos(u[0]);
    return J;
  };
  c.inverse = [](const Vec& x) { return Vec::Constant(1, std::atan2(x[1], x[0])); };
  c.analytic_sqrt_gram = [r](const Vec&) { return r; };
  return {D == 2 ? "s1" : "s1:D=" + std::to_string(D), 1, D, {c}, {}};
}

inline ManifoldSpec sphere() {
  ChartSpec c;
  c.domain = {{0.0, 0.0}, {2 * kPi, kPi}};
  c.grid_domain = c.domain;
  c.map = [](const Vec& z) {
    return Vec{{std::cos(z[0]) * std::sin(z[1]), std::sin(z[0]) * std::sin(z[1]), std::cos(z[1])}};
  };
  c.analytic_jacobian = [](const Vec& z) {
    Mat J(3, 2);
    J << -std::sin(z[0]) * std::sin(z[1]), std::cos(z[0]) * std::cos(z[1]),
        std::cos(z[0]) * std::sin(z[1]), std::sin(z[0]) * std::cos(z[1]), 0.0, -std::sin(z[1]);
    return J;
  };
  c.inverse = [](const Vec& x) {
    return Vec{{wrap_2pi(std::atan2(x[1], x[0])), std::atan2(std::hypot(x[0], x[1]), x[2])}};
  };
  c.analytic_sqrt_gram = [](const Vec& z) { return std::abs(std::sin(z[1])); };
  return {"s2", 2, 3, {c}, {}};
}

inline ManifoldSpec torus() {
  ChartSpec c;
  c.domain = {{0.0, 0.0}, {2 * kPi, 2 * kPi}};
  c.grid_domain = c.domain;
  c.map = [](const Vec& z) {
    const double a = 1.0 + 0.6 * std::cos(z[1]);
    return Vec{{a * std::cos(z[0]), a * std::sin(z[0]), 0.6 * std::sin(z[1])}};
  };
  c.analytic_jacobian = [](const Vec& z) {
    const double a = 1.0 + 0.6 * std::cos(z[1]);
    Mat J(3, 2);
    J << -a * std::sin(z[0]), -0.6 * std::sin(z[1]) * std::cos(z[0]), a * std::cos(z[0]),
        -0.6 * std::sin(z[1]) * std::sin(z[0]), 0.0, 0.6 * std::cos(z[1]);
    return J;
  };
  c.inverse = [](const Vec& x) {
    const double rho = std::hypot(x[0], x[1]);
    return Vec{{wrap_2pi(std::atan2(x[1], x[0])), wrap_2pi(std::atan2(x[2], rho - 1.0))}};
  };
  c.analytic_sqrt_gram = [](const Vec& z) { return 0.6 * (1.0 + 0.6 * std::cos(z[1])); };
  return {"t2", 2, 3, {c}, {}};
}

/// Upper sheet of the two-sheeted hyperboloid.
inline ManifoldSpec hyperboloid(double z1_grid_max = 13.8155) {
  ChartSpec c;
  c.domain = {{0.0, 0.0}, {kInf, 2 * kPi}};
  c.grid_domain = {{0.0, 0.0}, {z1_grid_max, 2 * kPi}};
  c.map = [](const Vec& z) {
    return Vec{{std::sinh(z[0]) * std::cos(z[1]), std::sinh(z[0]) * std::sin(z[1]), std::cosh(z[0])}};
  };
  c.analytic_jacobian = [](const Vec& z) {
    const double sh = std::sinh(z[0]), ch = std::cosh(z[0]);
    Mat J(3, 2);
    J << ch * std::cos(z[1]), -sh * std::sin(z[1]), ch * std::sin(z[1]), sh * std::cos(z[1]), sh, 0.0;
    return J;
  };
  c.inverse = [](const Vec& x) {
    return Vec{{std::asinh(std::hypot(x[0], x[1])), wrap_2pi(std::atan2(x[1], x[0]))}};
  };
  c.analytic_sqrt_gram = [](const Vec& z) {
    const double sh = std::sinh(z[0]), ch = std::cosh(z[0]);
    return std::sqrt(sh * sh + ch * ch) * std::abs(sh);
  };
  return {"h2", 2, 3, {c}, {}};
}

/// Archimedean spiral x = s(-cos s, sin s) with s = 3*pi*sqrt(z).
inline ManifoldSpec thin_spiral(double z_grid_max = 2.5) {
  ChartSpec c;
  c.domain = {{0.0}, {kInf}};
  c.grid_domain = {{1e-6}, {z_grid_max}};
  c.map = [](const Vec& z) {
    const double s = 3 * kPi * std::sqrt(z[0]);
    return Vec{{-s * std::cos(s), s * std::sin(s)}};
  };
  c.analytic_jacobian = [](const Vec& z) {
    const double s = 3 * kPi * std::sqrt(z[0]);
    const double ds = 3 * kPi / (2 * std::sqrt(z[0]));
    Mat J(2, 1);
    J << ds * (-std::cos(s) + s * std::sin(s)), ds * (std::sin(s) + s * std::cos(s));
    return J;
  };
  c.inverse = [](const Vec& x) { return Vec::Constant(1, std::pow(x.norm() / (3 * kPi), 2)); };
  c.analytic_sqrt_gram = [](const Vec& z) {
    const double s = 3 * kPi * std::sqrt(z[0]);
    return 3 * kPi / (2 * std::sqrt(z[0])) * std::sqrt(1 + s * s);
  };
  return {"thin_spiral", 1, 2, {c}, {}};
}

/// Swiss roll with angular offset `alpha` (the roll starts at angle alpha).
inline ManifoldSpec swiss_roll(double alpha = 1.5 * kPi) {
  ChartSpec c;
  c.domain = {{0.0, 0.0}, {1.0, 1.0}};
  c.grid_domain = c.domain;
  c.map = [alpha](const Vec& z) {
    const double t = alpha + 3 * kPi * z[1];
    return Vec{{t * std::cos(t), 21.0 * z[0], t * std::sin(t)}};
  };
  c.analytic_jacobian = [alpha](const Vec& z) {
    const double t = alpha + 3 * kPi * z[1];
    Mat J(3, 2);
    J << 0.0, 3 * kPi * (std::cos(t) - t * std::sin(t)), 21.0, 0.0, 0.0,
        3 * kPi * (std::sin(t) + t * std::cos(t));
    return J;
  };
  c.inverse = [alpha](const Vec& x) {
    return Vec{{x[1] / 21.0, (std::hypot(x[0], x[2]) - alpha) / (3 * kPi)}};
  };
  c.analytic_sqrt_gram = [alpha](const Vec& z) {
    const double t = alpha + 3 * kPi * z[1];
    return 63 * kPi * std::sqrt(1 + t * t);
  };
  return {"swiss_roll", 2, 3, {c}, {}};
}

/// Hyperboloid half (chart 0, z1 <= 0) glued to the lower half sphere (chart 1).
inline ManifoldSpec hyperboloid_sphere(double z1_grid_min = -13.8155) {
  ChartSpec hyp;
  hyp.domain = {{-kInf, 0.0}, {0.0, 2 * kPi}};
  hyp.grid_domain = {{z1_grid_min, 0.0}, {0.0, 2 * kPi}};
  hyp.map = [](const Vec& z) {
    const double a = std::abs(z[0]);
    return Vec{{-std::cosh(a) * std::cos(z[1]), -std::cosh(a) * std::sin(z[1]), std::sinh(a)}};
  };
  hyp.analytic_jacobian = [](const Vec& z) {
    const double a = std::abs(z[0]);
    const double sh = std::sinh(a), ch = std::cosh(a);
    // d/dz1 = -d/da on z1 <= 0
    Mat J(3, 2);
    J << sh * std::cos(z[1]), ch * std::sin(z[1]), sh * std::sin(z[1]), -ch * std::cos(z[1]), -ch, 0.0;
    return J;
  };
  hyp.inverse = [](const Vec& x) {
    return Vec{{-std::asinh(x[2]), wrap_2pi(std::atan2(-x[1], -x[0]))}};
  };
  hyp.analytic_sqrt_gram = [](const Vec& z) {
    const double a = std::abs(z[0]);
    const double sh = std::sinh(a), ch = std::cosh(a);
    return std::sqrt(sh * sh + ch * ch) * ch;
  };

  ChartSpec sph;
  sph.domain = {{0.0, 0.0}, {kPi / 2, 2 * kPi}};
  sph.grid_domain = sph.domain;
  sph.map = [](const Vec& z) {
    const double c1 = std::cos(z[0] + kPi);
    return Vec{{std::cos(z[1]) * c1, std::sin(z[1]) * c1, std::sin(z[0] + kPi)}};
  };
  sph.analytic_jacobian = [](const Vec& z) {
    const double c1 = std::cos(z[0] + kPi), s1 = std::sin(z[0] + kPi);
    Mat J(3, 2);
    J << -std::cos(z[1]) * s1, -std::sin(z[1]) * c1, -std::sin(z[1]) * s1, std::cos(z[1]) * c1, c1, 0.0;
    return J;
  };
  sph.inverse = [](const Vec& x) {
    return Vec{{std::atan2(-x[2], std::hypot(x[0], x[1])), wrap_2pi(std::atan2(-x[1], -x[0]))}};
  };
  sph.analytic_sqrt_gram = [](const Vec& z) { return std::abs(std::cos(z[0] + kPi)); };

  ManifoldSpec m{"hs2", 2, 3, {hyp, sph}, {}};
  m.chart_selector = [](const Vec& u) -> std::size_t { return u[0] <= 0.0 ? 0 : 1; };
  return m;
}

/// SO(2) as the pair [x, x_perp] in R^4.
inline ManifoldSpec so2() {
  ChartSpec c;
  c.domain = {{-kPi}, {kPi}};
  c.grid_domain = c.domain;
  c.map = [](const Vec& u) {
    const double cu = std::cos(u[0]), su = std::sin(u[0]);
    return Vec{{cu, su, -su, cu}};
  };
  c.analytic_jacobian = [](const Vec& u) {
    const double cu = std::cos(u[0]), su = std::sin(u[0]);
    Mat J(4, 1);
    J << -su, cu, -cu, -su;
    return J;
  };
  c.inverse = [](const Vec& x) { return Vec::Constant(1, std::atan2(x[1], x[0])); };
  c.analytic_sqrt_gram = [](const Vec&) { return std::sqrt(2.0); };
  return {"so2", 1, 4, {c}, {}};
}

}  // namespace zoo

/// Registry lookup. Names: s1, s2, t2, h2, thin_spiral, swiss_roll, hs2, so2.
/// Parameters follow a colon as comma-separated key=value pairs, e.g.
/// "s1:D=10", "s1:r=1", "swiss_roll:alpha=4.71".
inline ManifoldSpec make_manifold(const std::string& spec) {
  const auto colon = spec.find(':');
  const std::string name = spec.substr(0, colon);
  std::map<std::string, double> params;
  if (colon != std::string::npos) {
    std::stringstream ss(spec.substr(colon + 1));
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto eq = item.find('=');
      if (eq == std::string::npos) throw ParamError("malformed manifold parameter '" + item + "'");
      try {
        params[item.substr(0, eq)] = std::stod(item.substr(eq + 1));
      } catch (const std::exception&) {
        throw ParamError("non-numeric manifold parameter '" + item + "'");
      }
    }
  }
  auto take = [&](const std::string& key, double def) {
    auto it = params.find(key);
    if (it == params.end()) return def;
    const double v = it->second;
    params.erase(it);
    if (!std::isfinite(v)) throw ParamError("manifold parameter '" + key + "' is not finite");
    return v;
  };
  ManifoldSpec m;
  if (name == "s1") {
    const double r = take("r", 3.0);
    const double D = take("D", 2.0);
    m = zoo::circle(r, static_cast<int>(D));
    m.name = spec;
  } else if (name == "s2") {
    m = zoo::sphere();
  } else if (name == "t2") {
    m = zoo::torus();
  } else if (name == "h2") {
    m = zoo::hyperboloid(take("z1_max", 13.8155));
  } else if (name == "thin_spiral") {
    m = zoo::thin_spiral(take("z_max", 2.5));
  } else if (name == "swiss_roll") {
    m = zoo::swiss_roll(take("alpha", 1.5 * kPi));
  } else if (name == "hs2") {
    m = zoo::hyperboloid_sphere(take("z1_min", -13.8155));
  } else if (name == "so2") {
    m = zoo::so2();
  } else {
    throw UnknownManifoldError("unknown manifold '" + name + "'");
  }
  if (!params.empty())
    throw ParamError("unknown parameter '" + params.begin()->first + "' for manifold '" + name + "'");
  return m;
}

inline std::vector<std::string> manifold_names() {
  return {"s1", "s2", "t2", "h2", "thin_spiral", "swiss_roll", "hs2", "so2"};
}

}  // namespace infdef

#endif  // INFDEF_MANIFOLD_HPP_
