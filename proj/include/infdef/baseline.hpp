#ifndef INFDEF_BASELINE_HPP_
#define INFDEF_BASELINE_HPP_

// Flow-on-manifold baseline: a density fitted directly to latent samples, by a
// d-dimensional flow or, for constant true densities, a Gaussian KDE.

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "infdef/deflation.hpp"
#include "infdef/train.hpp"

namespace infdef {

enum class FomMethod { Auto, Flow, Kde };

inline FomMethod fom_method_from_string(const std::string& s) {
  if (s == "auto") return FomMethod::Auto;
  if (s == "flow") return FomMethod::Flow;
  if (s == "kde") return FomMethod::Kde;
  throw ConfigError("fom.method", "expected one of auto, flow, kde (got '" + s + "')");
}

struct FomResult {
  GriddedDensity density;
  std::string method;
  /// Per-axis KDE bandwidths (KDE path only).
  std::vector<double> bandwidth;
  /// Best validation NLL (flow path only).
  double best_val_nll = kInf;
};

/// Silverman's rule per axis: sigma_k (4 / ((d + 2) n))^(1 / (d + 4)).
inline std::vector<double> silverman_bandwidth(const Samples& u) {
  const double n = static_cast<double>(u.rows()), d = static_cast<double>(u.cols());
  std::vector<double> h;
  for (Eigen::Index k = 0; k < u.cols(); ++k) {
    const double mean = u.col(k).mean();
    const double var = (u.col(k).array() - mean).square().sum() / (n - 1);
    h.push_back(std::sqrt(var) * std::pow(4.0 / ((d + 2) * n), 1.0 / (d + 4)));
  }
  return h;
}

/// Product-Gaussian KDE on a grid. Kernels beyond 8 bandwidths are skipped.
inline GriddedDensity kde_on_grid(const Samples& u, const std::vector<double>& h, const LatentGrid& grid) {
  const int d = grid.dim();
  if (u.cols() != d || static_cast<int>(h.size()) != d) throw ParamError("KDE dimension mismatch");
  for (double b : h)
    if (!(b > 0)) throw ParamError("KDE bandwidth must be positive");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(u.rows()));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return u(a, 0) < u(b, 0); });
  std::vector<double> first(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) first[i] = u(order[i], 0);
  double norm = 1.0 / static_cast<double>(u.rows());
  for (double b : h) norm /= b * std::sqrt(2 * kPi);
  GriddedDensity out{grid, std::vector<double>(grid.size(), 0.0), {}};
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const Vec q = grid.point(g);
    const auto lo = std::lower_bound(first.begin(), first.end(), q[0] - 8 * h[0]) - first.begin();
    const auto hi = std::upper_bound(first.begin(), first.end(), q[0] + 8 * h[0]) - first.begin();
    double s = 0.0;
    for (auto i = lo; i < hi; ++i) {
      double e = 0.0;
      for (int k = 0; k < d; ++k) {
        const double z = (u(order[static_cast<std::size_t>(i)], k) - q[k]) / h[static_cast<std::size_t>(k)];
        e += z * z;
      }
      s += std::exp(-0.5 * e);
    }
    out.values[g] = s * norm;
  }
  return out;
}

/// Fits the baseline to latent samples and evaluates it on `grid`.
inline FomResult fom_baseline(const Samples& latent, const LatentDensity& p, const LatentGrid& grid,
                              FomMethod method, const FlowArchitecture& arch, const TrainConfig& cfg,
                              std::uint64_t seed) {
  if (latent.rows() < 1000) throw ParamError("FOM baseline needs at least 1000 latent samples");
  if (latent.cols() != p.dim() || grid.dim() != p.dim()) throw ParamError("FOM dimension mismatch");
  if (method == FomMethod::Auto) method = p.is_constant() ? FomMethod::Kde : FomMethod::Flow;
  FomResult r;
  if (method == FomMethod::Kde) {
    r.method = "kde";
    r.bandwidth = silverman_bandwidth(latent);
    r.density = kde_on_grid(latent, r.bandwidth, grid);
    return r;
  }
  r.method = "flow";
  FlowArchitecture a = arch;
  a.D = p.dim();
  TrainConfig c = cfg;
  c.seed = seed;
  const auto trained = train(FlowModel(a, seed), Mat(latent), c);
  r.best_val_nll = trained.best_val_nll;
  Mat U(static_cast<Eigen::Index>(grid.size()), grid.dim());
  for (std::size_t i = 0; i < grid.size(); ++i) U.row(static_cast<Eigen::Index>(i)) = grid.point(i).transpose();
  const Vec lp = trained.flow.log_density(U);
  r.density = {grid, std::vector<double>(lp.data(), lp.data() + lp.size()), {}};
  for (auto& v : r.density.values) v = std::exp(v);
  return r;
}

}  // namespace infdef

#endif  // INFDEF_BASELINE_HPP_
