#ifndef INFDEF_BOUNDS_HPP_
#define INFDEF_BOUNDS_HPP_

// Heuristic bounds on the inflation variance: an upper bound from the latent
// density's curvature and the manifold's curvature, and a lower bound from
// nearest-neighbour spacing of the training data.

#include <algorithm>
#include <numeric>
#include <vector>

#include "infdef/latent.hpp"
#include "infdef/manifold.hpp"

namespace infdef {

namespace detail {

inline Mat chart_jacobian_unchecked(const ChartSpec& c, const Vec& u) {
  return c.analytic_jacobian ? c.analytic_jacobian(u) : fd_jacobian(c.map, u);
}

}  // namespace detail

/// Principal curvatures at f(u): the curve curvature for d = 1, the
/// eigenvalues of the Weingarten map for hypersurfaces with d = 2.
inline std::vector<double> principal_curvatures(const ManifoldSpec& m, std::size_t chart_index, const Vec& u) {
  const auto& c = m.chart(chart_index);
  detail::check_domain(c, u);
  const Mat J = detail::chart_jacobian_unchecked(c, u);
  if (m.d == 1) {
    const double h = 1e-5 * std::max(1.0, std::abs(u[0]));
    Vec up = u, um = u;
    up[0] += h;
    um[0] -= h;
    const Vec t = J.col(0);
    const Vec a = (detail::chart_jacobian_unchecked(c, up).col(0) - detail::chart_jacobian_unchecked(c, um).col(0)) / (2 * h);
    const double n2 = t.squaredNorm();
    const double cross = std::max(0.0, n2 * a.squaredNorm() - std::pow(t.dot(a), 2));
    return {std::sqrt(cross) / std::pow(n2, 1.5)};
  }
  if (m.d == 2 && m.D == 3) {
    auto unit_normal = [&](const Vec& w) {
      const Mat Jw = detail::chart_jacobian_unchecked(c, w);
      const Eigen::Vector3d a = Jw.col(0), b = Jw.col(1);
      const Eigen::Vector3d n = a.cross(b);
      return Vec(n / n.norm());
    };
    Mat dN(3, 2);
    for (int k = 0; k < 2; ++k) {
      const double h = 1e-5 * std::max(1.0, std::abs(u[k]));
      Vec up = u, um = u;
      up[k] += h;
      um[k] -= h;
      dN.col(k) = (unit_normal(up) - unit_normal(um)) / (2 * h);
    }
    const Mat G = J.transpose() * J;
    Mat II = -J.transpose() * dN;
    II = 0.5 * (II + II.transpose()).eval();
    const Mat W = G.ldlt().solve(II);
    const Eigen::EigenSolver<Mat> es(W);
    return {es.eigenvalues()[0].real(), es.eigenvalues()[1].real()};
  }
  throw ParamError("principal curvatures are implemented for curves and surfaces in R^3");
}

/// (1 / max |kappa_i|)^2, +inf where the manifold is flat.
inline double sigma2_gauss(const ManifoldSpec& m, std::size_t chart_index, const Vec& u) {
  double kmax = 0.0;
  for (double k : principal_curvatures(m, chart_index, u)) kmax = std::max(kmax, std::abs(k));
  return kmax > 0 ? 1.0 / (kmax * kmax) : kInf;
}

/// 2 pi(u) / |sum_ij pi''(u)_ij (G^-1)_ij|, +inf where the weighted Hessian vanishes.
inline double sigma2_prop(const ManifoldSpec& m, std::size_t chart_index, const LatentDensity& p, const Vec& u) {
  const Mat J = jacobian(m, chart_index, u);
  const Mat Ginv = (J.transpose() * J).inverse();
  const double s = std::abs(p.hess(u).cwiseProduct(Ginv).sum());
  return s > 0 ? 2 * p.pdf(u) / s : kInf;
}

struct SigmaUpperReport {
  double value = kInf;
  double std_error = 0.0;
  std::size_t n = 0;
};

/// Mean over latent draws of min(sigma2_prop, sigma2_gauss). Any infinite
/// pointwise value makes the result the +inf sentinel.
inline SigmaUpperReport sigma_upper_bound(const ManifoldSpec& m, std::size_t chart_index, const LatentDensity& p,
                                          std::size_t n_samples = 10000, std::uint64_t seed = 0) {
  if (m.D - m.d < 1) throw ParamError("sigma upper bound needs codimension >= 1");
  if (p.dim() != m.d) throw ParamError("latent density dimension does not match the manifold");
  const Samples u = p.sample(n_samples, seed);
  double sum = 0.0, sum_sq = 0.0;
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    const Vec ui = u.row(i).transpose();
    const double v = std::min(sigma2_prop(m, chart_index, p, ui), sigma2_gauss(m, chart_index, ui));
    if (!std::isfinite(v)) return {kInf, 0.0, n_samples};
    sum += v;
    sum_sq += v * v;
  }
  const double n = static_cast<double>(n_samples);
  const double mean = sum / n;
  const double var = std::max(0.0, sum_sq / n - mean * mean);
  return {mean, std::sqrt(var / n), n_samples};
}

// ---------------------------------------------------------------------------
// Nearest-neighbour spacing
// ---------------------------------------------------------------------------

/// Static k-d tree over the rows of a sample matrix.
class KDTree {
 public:
  explicit KDTree(const Samples& pts, std::size_t leaf_size = 16) : pts_(pts), leaf_(leaf_size) {
    idx_.resize(static_cast<std::size_t>(pts.rows()));
    std::iota(idx_.begin(), idx_.end(), 0);
    if (!idx_.empty()) build(0, idx_.size());
  }

  /// Index and squared distance of the nearest row other than `self`.
  std::pair<Eigen::Index, double> nearest(const Vec& q, Eigen::Index self = -1) const {
    std::pair<Eigen::Index, double> best{-1, kInf};
    if (!nodes_.empty()) search(0, q, self, best);
    return best;
  }

 private:
  struct Node {
    std::size_t begin, end;
    int axis = -1;
    double split = 0.0;
    int left = -1, right = -1;
  };

  int build(std::size_t b, std::size_t e) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({b, e});
    if (e - b <= leaf_) return id;
    Eigen::Index axis = 0;
    double spread = -1.0;
    for (Eigen::Index k = 0; k < pts_.cols(); ++k) {
      double lo = kInf, hi = -kInf;
      for (std::size_t i = b; i < e; ++i) {
        lo = std::min(lo, pts_(idx_[i], k));
        hi = std::max(hi, pts_(idx_[i], k));
      }
      if (hi - lo > spread) spread = hi - lo, axis = k;
    }
    if (spread <= 0) return id;
    const std::size_t mid = (b + e) / 2;
    std::nth_element(idx_.begin() + static_cast<std::ptrdiff_t>(b), idx_.begin() + static_cast<std::ptrdiff_t>(mid),
                     idx_.begin() + static_cast<std::ptrdiff_t>(e),
                     [&](Eigen::Index a, Eigen::Index c) { return pts_(a, axis) < pts_(c, axis); });
    const double split = pts_(idx_[mid], axis);
    const int l = build(b, mid);
    const int r = build(mid, e);
    nodes_[static_cast<std::size_t>(id)].axis = static_cast<int>(axis);
    nodes_[static_cast<std::size_t>(id)].split = split;
    nodes_[static_cast<std::size_t>(id)].left = l;
    nodes_[static_cast<std::size_t>(id)].right = r;
    return id;
  }

  void search(int id, const Vec& q, Eigen::Index self, std::pair<Eigen::Index, double>& best) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        if (idx_[i] == self) continue;
        const double d2 = (pts_.row(idx_[i]).transpose() - q).squaredNorm();
        if (d2 < best.second) best = {idx_[i], d2};
      }
      return;
    }
    const double diff = q[n.axis] - n.split;
    const int near = diff < 0 ? n.left : n.right;
    const int far = diff < 0 ? n.right : n.left;
    search(near, q, self, best);
    if (diff * diff <= best.second) search(far, q, self, best);
  }

  const Samples& pts_;
  std::size_t leaf_;
  std::vector<Eigen::Index> idx_;
  std::vector<Node> nodes_;
};

struct SigmaLowerReport {
  /// Mean squared nearest-neighbour distance.
  double squared = 0.0;
  /// Mean nearest-neighbour distance.
  double raw = 0.0;
};

inline SigmaLowerReport sigma_lower_bound(const Samples& data) {
  if (data.rows() < 2) throw ParamError("nearest-neighbour bound needs at least 2 points");
  const KDTree tree(data);
  double sq = 0.0, raw = 0.0;
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    const double d2 = tree.nearest(data.row(i).transpose(), i).second;
    sq += d2;
    raw += std::sqrt(d2);
  }
  const double n = static_cast<double>(data.rows());
  return {sq / n, raw / n};
}

}  // namespace infdef

#endif  // INFDEF_BOUNDS_HPP_
