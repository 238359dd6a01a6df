#ifndef INFDEF_DEFLATION_HPP_
#define INFDEF_DEFLATION_HPP_

// Deflation of a learned inflated density, induced latent densities on
// evaluation grids and Kolmogorov-Smirnov distances between gridded densities.

#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "infdef/flow.hpp"
#include "infdef/inflation.hpp"
#include "infdef/latent.hpp"

namespace infdef {

/// Batch log-density over the rows of an n x D matrix.
using LogDensityFn = std::function<Vec(const Mat&)>;

/// p*(x) = q(x) / q_n(x|x) for on-manifold x.
struct DensityEstimate {
  LogDensityFn log_inflated;
  double log_constant = 0.0;
  json provenance;

  Vec log_values(const Mat& X) const { return log_inflated(X).array() - log_constant; }
  Vec values(const Mat& X) const { return log_values(X).array().exp(); }
  double operator()(const Vec& x) const { return values(Mat(x.transpose()))[0]; }
};

inline DensityEstimate deflate(LogDensityFn log_inflated, const NoiseModel& noise, json provenance = json::object()) {
  provenance["noise"] = noise.tag();
  return {std::move(log_inflated), log_deflation_constant(noise), std::move(provenance)};
}

inline DensityEstimate deflate(const FlowModel& flow, const NoiseModel& noise, json provenance = json::object()) {
  if (flow.dim() != noise.D) throw ParamError("flow dimension does not match the noise model");
  return deflate([flow](const Mat& X) { return flow.log_density(X); }, noise, std::move(provenance));
}

// ---------------------------------------------------------------------------
// Evaluation grids
// ---------------------------------------------------------------------------

/// Tensor grid; the last axis varies fastest in flat indexing.
struct LatentGrid {
  std::vector<std::vector<double>> axes;

  int dim() const { return static_cast<int>(axes.size()); }
  std::vector<int> shape() const {
    std::vector<int> s;
    for (const auto& a : axes) s.push_back(static_cast<int>(a.size()));
    return s;
  }
  std::size_t size() const {
    std::size_t n = 1;
    for (const auto& a : axes) n *= a.size();
    return n;
  }
  Vec point(std::size_t flat) const {
    Vec u(dim());
    for (int k = dim() - 1; k >= 0; --k) {
      const auto& a = axes[static_cast<std::size_t>(k)];
      u[k] = a[flat % a.size()];
      flat /= a.size();
    }
    return u;
  }
  bool operator==(const LatentGrid& o) const { return axes == o.axes; }
};

inline constexpr double kGridShrink = 1e-6;

/// Evenly spaced grid over `domain` shrunk inwards by `shrink`.
inline LatentGrid evaluation_grid(const Box& domain, const std::vector<int>& resolution, double shrink = kGridShrink) {
  if (resolution.size() != domain.dim()) throw ParamError("grid resolution must have one entry per axis");
  if (!domain.bounded()) throw ParamError("evaluation grid needs a bounded domain");
  const Box b = domain.shrunk(shrink);
  LatentGrid g;
  for (std::size_t k = 0; k < b.dim(); ++k) {
    if (resolution[k] < 2) throw ParamError("grid resolution must be >= 2");
    if (!(b.hi[k] > b.lo[k])) throw ParamError("evaluation domain is empty after shrinking");
    g.axes.push_back(linspace(b.lo[k], b.hi[k], resolution[k]));
  }
  return g;
}

/// Default grid: 1000 points in 1D, 100 x 100 in 2D, over the density's
/// finite box intersected with the chart domain.
inline LatentGrid default_grid(const LatentDensity& p, const ManifoldSpec& m, std::size_t chart_index = 0,
                               int res1 = 1000, int res2 = 100) {
  const Box& c = m.chart(chart_index).domain;
  Box b = p.grid_box();
  if (b.dim() != c.dim()) throw ParamError("latent density dimension does not match the chart");
  for (std::size_t k = 0; k < b.dim(); ++k) {
    b.lo[k] = std::max(b.lo[k], c.lo[k]);
    b.hi[k] = std::min(b.hi[k], c.hi[k]);
  }
  return evaluation_grid(b, std::vector<int>(b.dim(), b.dim() == 1 ? res1 : res2));
}

struct GriddedDensity {
  LatentGrid grid;
  std::vector<double> values;
  /// Flat indices of points skipped because the chart is singular there (value 0).
  std::vector<std::size_t> dropped;
};

/// pi(u) of the true latent density on the grid.
inline GriddedDensity true_latent(const LatentDensity& p, const LatentGrid& grid) {
  GriddedDensity out{grid, std::vector<double>(grid.size()), {}};
  for (std::size_t i = 0; i < grid.size(); ++i) out.values[i] = p.pdf(grid.point(i));
  return out;
}

/// pi_hat(u) = p_hat(f(u)) sqrt(det G_f(u)), not renormalised.
inline GriddedDensity induced_latent(const DensityEstimate& est, const ManifoldSpec& m, std::size_t chart_index,
                                     const LatentGrid& grid) {
  if (grid.dim() != m.d) throw ParamError("grid dimension does not match the manifold");
  const auto& c = m.chart(chart_index);
  GriddedDensity out{grid, std::vector<double>(grid.size(), 0.0), {}};
  std::vector<std::size_t> keep;
  std::vector<double> root_gram;
  Mat X(static_cast<Eigen::Index>(grid.size()), m.D);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Vec u = grid.point(i);
    if (!c.domain.contains(u)) throw DomainError("evaluation grid leaves the chart domain");
    double g = 0.0;
    try {
      g = gram_det(m, chart_index, u);
    } catch (const SingularityError&) {
      out.dropped.push_back(i);
      continue;
    }
    X.row(static_cast<Eigen::Index>(keep.size())) = embed(m, chart_index, u).transpose();
    keep.push_back(i);
    root_gram.push_back(std::sqrt(g));
  }
  if (keep.empty()) return out;
  const Vec p = est.values(X.topRows(static_cast<Eigen::Index>(keep.size())));
  for (std::size_t k = 0; k < keep.size(); ++k) out.values[keep[k]] = p[static_cast<Eigen::Index>(k)] * root_gram[k];
  return out;
}

// ---------------------------------------------------------------------------
// Kolmogorov-Smirnov distance
// ---------------------------------------------------------------------------

struct KSReport {
  double ks = 0.0;
  std::vector<int> grid_shape;
  /// One value in 1D; orderings (<=,<=), (<=,>=), (>=,<=), (>=,>=) in 2D.
  std::vector<double> ordering_values;

  json to_json() const { return {{"ks", ks}, {"grid_shape", grid_shape}, {"ordering_values", ordering_values}}; }
};

namespace detail {

/// Cumulative trapezoid along a strided line, in place.
inline void cumulative_trapezoid(std::vector<double>& v, std::size_t start, std::size_t stride,
                                 const std::vector<double>& x) {
  double acc = 0.0, prev = v[start];
  v[start] = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) {
    const std::size_t k = start + i * stride;
    const double cur = v[k];
    acc += 0.5 * (prev + cur) * (x[i] - x[i - 1]);
    prev = cur;
    v[k] = acc;
  }
}

/// Reverses the grid along `axis` (axis values negated so spacing stays positive).
inline void flip_axis(std::vector<double>& v, std::vector<double>& x, std::size_t other, int axis) {
  const std::size_t n = x.size();
  for (std::size_t o = 0; o < other; ++o)
    for (std::size_t i = 0; i < n / 2; ++i) {
      const std::size_t a = axis == 0 ? i * other + o : o * n + i;
      const std::size_t b = axis == 0 ? (n - 1 - i) * other + o : o * n + (n - 1 - i);
      std::swap(v[a], v[b]);
    }
  std::reverse(x.begin(), x.end());
  for (auto& t : x) t = -t;
}

inline std::vector<double> cumulative_2d(std::vector<double> v, const std::vector<double>& x0,
                                         const std::vector<double>& x1) {
  const std::size_t n0 = x0.size(), n1 = x1.size();
  for (std::size_t i = 0; i < n0; ++i) cumulative_trapezoid(v, i * n1, 1, x1);
  for (std::size_t j = 0; j < n1; ++j) cumulative_trapezoid(v, j, n1, x0);
  return v;
}

}  // namespace detail

inline KSReport ks_statistic(const GriddedDensity& pi_true, const GriddedDensity& pi_hat) {
  if (!(pi_true.grid == pi_hat.grid)) throw GridMismatchError("KS needs both densities on the same grid");
  const auto& g = pi_true.grid;
  if (pi_true.values.size() != g.size() || pi_hat.values.size() != g.size())
    throw GridMismatchError("gridded values do not match the grid size");
  KSReport r;
  r.grid_shape = g.shape();
  if (g.dim() == 1) {
    auto F = pi_true.values, G = pi_hat.values;
    detail::cumulative_trapezoid(F, 0, 1, g.axes[0]);
    detail::cumulative_trapezoid(G, 0, 1, g.axes[0]);
    double m = 0.0;
    for (std::size_t i = 0; i < F.size(); ++i) m = std::max(m, std::abs(F[i] - G[i]));
    r.ordering_values = {m};
  } else if (g.dim() == 2) {
    for (int flip0 = 0; flip0 < 2; ++flip0)
      for (int flip1 = 0; flip1 < 2; ++flip1) {
        auto a = pi_true.values, b = pi_hat.values;
        auto x0 = g.axes[0], x1 = g.axes[1];
        if (flip0) {
          auto y = x0;
          detail::flip_axis(a, x0, x1.size(), 0);
          detail::flip_axis(b, y, x1.size(), 0);
        }
        if (flip1) {
          auto y = x1;
          detail::flip_axis(a, x1, x0.size(), 1);
          detail::flip_axis(b, y, x0.size(), 1);
        }
        const auto F = detail::cumulative_2d(std::move(a), x0, x1);
        const auto G = detail::cumulative_2d(std::move(b), x0, x1);
        double m = 0.0;
        for (std::size_t i = 0; i < F.size(); ++i) m = std::max(m, std::abs(F[i] - G[i]));
        r.ordering_values.push_back(m);
      }
  } else {
    throw ParamError("KS statistic is implemented for d = 1 and d = 2");
  }
  r.ks = *std::max_element(r.ordering_values.begin(), r.ordering_values.end());
  return r;
}

// ---------------------------------------------------------------------------
// Flow-free oracle
// ---------------------------------------------------------------------------

/// Analytic log q(x) = log p*(x) + log q_n(x|x) at on-manifold x. The latent
/// coordinate comes from the chart's analytic inverse when it has one and
/// from a nearest-point search otherwise. `constant_scale` multiplies
/// q_n(x|x) to emulate a wrong deflation constant.
inline LogDensityFn analytic_inflated_log_density(const ManifoldSpec& m, std::size_t chart_index,
                                                  const LatentDensity& p, const NoiseModel& noise,
                                                  double constant_scale = 1.0, int search_resolution = 0) {
  if (!(constant_scale > 0)) throw ParamError("constant_scale must be positive");
  const int res = search_resolution > 0 ? search_resolution : (m.d == 1 ? 256 : 48);
  const double log_c = log_deflation_constant(noise) + std::log(constant_scale);
  ManifoldSpec single = m;
  single.charts = {m.chart(chart_index)};
  single.chart_selector = {};
  Box search = p.grid_box();
  const Box& dom = single.charts[0].domain;
  for (std::size_t k = 0; k < search.dim(); ++k) {
    search.lo[k] = std::max(search.lo[k], dom.lo[k]);
    search.hi[k] = std::min(search.hi[k], dom.hi[k]);
  }
  return [single, search, p, log_c, res](const Mat& X) {
    const auto& c = single.charts[0];
    NearestPointOptions opt;
    opt.grid_boxes = {search};
    Vec out(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      Vec u;
      if (c.inverse) {
        u = c.inverse(X.row(i).transpose());
      } else {
        const auto cands = nearest_point(single, X.row(i).transpose(), res, opt);
        if (cands.empty()) throw NumericalError("no foot point found for oracle evaluation");
        u = std::min_element(cands.begin(), cands.end(), [](const auto& a, const auto& b) {
              return a.distance < b.distance;
            })->u;
      }
      out[i] = std::log(p.pdf(u)) - 0.5 * std::log(gram_det(single, 0, u)) + log_c;
    }
    return out;
  };
}

// ---------------------------------------------------------------------------
// Serialisation
// ---------------------------------------------------------------------------

/// One row per grid point: axis coordinates u0[,u1] then one column per density.
inline void write_gridded_csv(const std::filesystem::path& path, const std::vector<std::string>& names,
                              const std::vector<const GriddedDensity*>& cols) {
  if (cols.empty() || names.size() != cols.size()) throw ParamError("gridded CSV needs named columns");
  const auto& g = cols.front()->grid;
  for (const auto* c : cols)
    if (!(c->grid == g)) throw GridMismatchError("gridded CSV columns use different grids");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  for (int k = 0; k < g.dim(); ++k) f << (k ? "," : "") << "u" << k;
  for (const auto& n : names) f << "," << n;
  f << "\n";
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Vec u = g.point(i);
    for (int k = 0; k < g.dim(); ++k) f << (k ? "," : "") << fmt_double(u[k]);
    for (const auto* c : cols) f << "," << fmt_double(c->values[i]);
    f << "\n";
  }
}

}  // namespace infdef

#endif  // INFDEF_DEFLATION_HPP_
