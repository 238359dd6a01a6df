#ifndef INFDEF_LATENT_HPP_
#define INFDEF_LATENT_HPP_

// Latent prior densities on boxes in R^1 and R^2 with tabulated normalisation
// and grid-based exact-inverse sampling.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "infdef/io.hpp"
#include "infdef/linalg.hpp"

namespace infdef {

/// One additive term of an unnormalised density.
///
/// Separable terms are weight * prod_k factors[k](u_k); non-separable terms set
/// `joint` instead.
struct DensityComponent {
  double weight = 1.0;
  std::vector<std::function<double(double)>> factors;
  std::function<double(const Vec&)> joint;

  double operator()(const Vec& u) const {
    if (joint) return weight * joint(u);
    double v = weight;
    for (std::size_t k = 0; k < factors.size(); ++k) v *= factors[k](u[static_cast<Eigen::Index>(k)]);
    return v;
  }
};

/// Analytic derivative data for a single 1D von Mises term exp(kappa cos(u - mu)).
struct VonMisesShape {
  double kappa = 0.0;
  double mu = 0.0;
};

inline constexpr int kDensityGridPoints = 4097;

class LatentDensity {
 public:
  LatentDensity(std::string name, json params, Box support, Box grid_box,
                std::vector<DensityComponent> components, std::optional<VonMisesShape> von_mises = {},
                int resolution = kDensityGridPoints, const std::filesystem::path& cache_dir = {})
      : name_(std::move(name)),
        params_(std::move(params)),
        support_(std::move(support)),
        grid_box_(std::move(grid_box)),
        components_(std::move(components)),
        von_mises_(von_mises),
        resolution_(resolution) {
    if (support_.dim() < 1 || support_.dim() > 2)
      throw ParamError("latent densities are implemented for d = 1 and d = 2");
    if (!grid_box_.bounded()) throw ParamError("density grid box must be finite");
    build_axes();
    if (cache_dir.empty() || !load_cache(cache_dir)) {
      build_tables();
      if (!cache_dir.empty()) save_cache(cache_dir);
    }
    detect_constant();
  }

  const std::string& name() const { return name_; }
  const json& params() const { return params_; }
  int dim() const { return static_cast<int>(support_.dim()); }
  /// Declared support (may be unbounded).
  const Box& support() const { return support_; }
  /// Finite box used for normalisation, sampling and evaluation grids.
  const Box& grid_box() const { return grid_box_; }
  int resolution() const { return resolution_; }
  double log_partition() const { return log_z_; }
  bool is_constant() const { return constant_; }
  const std::vector<DensityComponent>& components() const { return components_; }
  const std::optional<VonMisesShape>& von_mises() const { return von_mises_; }

  /// Support, grid box and truncation flag per axis.
  json metadata() const {
    json axes = json::array();
    for (std::size_t i = 0; i < support_.dim(); ++i) {
      json a;
      a["support"] = {std::isfinite(support_.lo[i]) ? json(support_.lo[i]) : json("-inf"),
                      std::isfinite(support_.hi[i]) ? json(support_.hi[i]) : json("inf")};
      a["grid"] = {grid_box_.lo[i], grid_box_.hi[i]};
      a["truncated"] = !std::isfinite(support_.lo[i]) || !std::isfinite(support_.hi[i]);
      axes.push_back(a);
    }
    return {{"name", name_}, {"params", params_}, {"axes", axes}, {"log_partition", log_z_}};
  }

  double unnormalized(const Vec& u) const {
    double v = 0.0;
    for (const auto& c : components_) v += c(u);
    return v;
  }

  double pdf(const Vec& u) const {
    check(u);
    return unnormalized(u) * std::exp(-log_z_);
  }

  Vec grad(const Vec& u) const {
    check(u);
    if (von_mises_ && dim() == 1) {
      const auto [k, mu] = *von_mises_;
      return Vec::Constant(1, -k * std::sin(u[0] - mu) * pdf(u));
    }
    Vec g(dim());
    Vec up = u, um = u;
    for (int i = 0; i < dim(); ++i) {
      const double h = fd_step(u[i]);
      up[i] = u[i] + h;
      um[i] = u[i] - h;
      g[i] = (unnormalized(up) - unnormalized(um)) / (2 * h);
      up[i] = um[i] = u[i];
    }
    return g * std::exp(-log_z_);
  }

  /// Hessian of the normalised pdf. Second differences use a 1e-4 relative step.
  Mat hess(const Vec& u) const {
    check(u);
    if (von_mises_ && dim() == 1) {
      const auto [k, mu] = *von_mises_;
      const double s = std::sin(u[0] - mu), c = std::cos(u[0] - mu);
      return Mat::Constant(1, 1, pdf(u) * (k * k * s * s - k * c));
    }
    return fd_hess(u);
  }

  /// Finite-difference Hessian regardless of analytic availability.
  Mat fd_hess(const Vec& u) const {
    const int d = dim();
    Mat H(d, d);
    auto f = [&](const Vec& v) { return unnormalized(v); };
    std::vector<double> h(d);
    for (int i = 0; i < d; ++i) h[i] = 1e-4 * std::max(1.0, std::abs(u[i]));
    const double f0 = f(u);
    for (int i = 0; i < d; ++i) {
      Vec a = u, b = u;
      a[i] += h[i];
      b[i] -= h[i];
      H(i, i) = (f(a) - 2 * f0 + f(b)) / (h[i] * h[i]);
      for (int j = i + 1; j < d; ++j) {
        Vec pp = u, pm = u, mp = u, mm = u;
        pp[i] += h[i], pp[j] += h[j];
        pm[i] += h[i], pm[j] -= h[j];
        mp[i] -= h[i], mp[j] += h[j];
        mm[i] -= h[i], mm[j] -= h[j];
        H(i, j) = H(j, i) = (f(pp) - f(pm) - f(mp) + f(mm)) / (4 * h[i] * h[j]);
      }
    }
    return H * std::exp(-log_z_);
  }

  /// i.i.d. draws, n x d. Deterministic for a given seed.
  Samples sample(std::size_t n, std::uint64_t seed) const {
    if (n < 1) throw ParamError("sample count must be >= 1");
    Rng rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Samples out(static_cast<Eigen::Index>(n), dim());
    if (dim() == 1) {
      for (std::size_t i = 0; i < n; ++i)
        out(static_cast<Eigen::Index>(i), 0) = invert(axis_[0], row_values_, cum_, unif(rng));
      return out;
    }
    // 2D: marginal of u1 from row integrals, then the conditional along u2.
    std::vector<double> a(n), b(n), c(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = unif(rng);
      b[i] = unif(rng);
      c[i] = unif(rng);
    }
    const auto& x1 = axis_[0];
    const double h1 = x1[1] - x1[0];
    std::vector<std::size_t> row_of(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double u1 = invert(x1, row_values_, cum_, a[i]);
      out(static_cast<Eigen::Index>(i), 0) = u1;
      std::size_t cell = std::min<std::size_t>(static_cast<std::size_t>((u1 - x1[0]) / h1), x1.size() - 2);
      const double lam = std::clamp((u1 - x1[cell]) / h1, 0.0, 1.0);
      const double w_hi = lam * row_values_[cell + 1];
      const double w_lo = (1 - lam) * row_values_[cell];
      const double p_hi = (w_hi + w_lo) > 0 ? w_hi / (w_hi + w_lo) : lam;
      row_of[i] = b[i] < p_hi ? cell + 1 : cell;
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto p, auto q) { return row_of[p] < row_of[q]; });
    std::vector<double> row, row_cum;
    std::size_t current = static_cast<std::size_t>(-1);
    for (auto idx : order) {
      if (row_of[idx] != current) {
        current = row_of[idx];
        row = grid_row(current);
        row_cum = cumulative(axis_[1], row);
      }
      out(static_cast<Eigen::Index>(idx), 1) = invert(axis_[1], row, row_cum, c[idx]);
    }
    return out;
  }

  /// Values of the unnormalised density on grid row `i` (u1 = axis0[i]) for d = 2.
  std::vector<double> grid_row(std::size_t i) const {
    const auto& x2 = axis_[1];
    std::vector<double> row(x2.size(), 0.0);
    const double u1 = axis_[0][i];
    Vec u(2);
    u[0] = u1;
    for (const auto& c : components_) {
      if (c.joint) {
        for (std::size_t j = 0; j < x2.size(); ++j) {
          u[1] = x2[j];
          row[j] += c.weight * c.joint(u);
        }
      } else {
        const double a = c.weight * c.factors[0](u1);
        if (a == 0.0) continue;
        const auto& col = factor_cache_.at(&c - components_.data());
        for (std::size_t j = 0; j < x2.size(); ++j) row[j] += a * col[j];
      }
    }
    return row;
  }

  /// CDF of a 1D density (or of the u1 marginal in 2D) from the tabulated grid.
  double marginal_cdf(double u1) const {
    const auto& x = axis_[0];
    if (u1 <= x.front()) return 0.0;
    if (u1 >= x.back()) return 1.0;
    const double h = x[1] - x[0];
    const auto i = std::min<std::size_t>(static_cast<std::size_t>((u1 - x[0]) / h), x.size() - 2);
    const double t = u1 - x[i];
    const double p0 = row_values_[i], p1 = row_values_[i + 1];
    const double part = p0 * t + 0.5 * (p1 - p0) / h * t * t;
    return (cum_[i] + part) / cum_.back();
  }

  const std::vector<double>& axis(int i) const { return axis_[static_cast<std::size_t>(i)]; }

  /// Tabulated tables, serialised into the density cache.
  struct Tables {
    std::vector<double> row_values;
    std::vector<double> cumulative;
    double log_z = 0.0;
  };
  Tables tables() const { return {row_values_, cum_, log_z_}; }

  /// Content hash of the density definition (name, parameters, grid).
  std::string content_key() const {
    json j = {{"name", name_}, {"params", params_}, {"res", resolution_},
              {"lo", grid_box_.lo}, {"hi", grid_box_.hi}};
    return content_hash(j);
  }

  void save_cache(const std::filesystem::path& dir) const;
  bool load_cache(const std::filesystem::path& dir);

 private:
  void check(const Vec& u) const {
    if (u.size() != dim()) throw DomainError("latent point has wrong dimension");
    if (!support_.contains(u)) throw DomainError("latent point outside the density support");
  }

  static std::vector<double> cumulative(const std::vector<double>& x, const std::vector<double>& p) {
    std::vector<double> c(x.size(), 0.0);
    for (std::size_t i = 1; i < x.size(); ++i) c[i] = c[i - 1] + 0.5 * (p[i] + p[i - 1]) * (x[i] - x[i - 1]);
    return c;
  }

  /// Exact inverse of the piecewise-quadratic CDF of the piecewise-linear density.
  static double invert(const std::vector<double>& x, const std::vector<double>& p,
                       const std::vector<double>& cum, double unif) {
    const double total = cum.back();
    if (!(total > 0)) return x.front() + unif * (x.back() - x.front());
    const double target = unif * total;
    auto it = std::upper_bound(cum.begin(), cum.end(), target);
    std::size_t i = it == cum.begin() ? 0 : static_cast<std::size_t>(it - cum.begin()) - 1;
    i = std::min(i, x.size() - 2);
    const double h = x[i + 1] - x[i];
    const double r = target - cum[i];
    const double p0 = p[i];
    const double a = (p[i + 1] - p0) / h;
    const double disc = std::max(0.0, p0 * p0 + 2 * a * r);
    const double denom = p0 + std::sqrt(disc);
    double t = denom > 0 ? 2 * r / denom : 0.0;
    return x[i] + std::clamp(t, 0.0, h);
  }

  void build_axes() {
    const int d = dim();
    for (int i = 0; i < d; ++i)
      axis_.push_back(linspace(grid_box_.lo[static_cast<std::size_t>(i)],
                               grid_box_.hi[static_cast<std::size_t>(i)],
                               static_cast<std::size_t>(resolution_)));
    if (d == 2) {
      factor_cache_.resize(components_.size());
      for (std::size_t c = 0; c < components_.size(); ++c) {
        if (components_[c].joint) continue;
        auto& col = factor_cache_[c];
        col.resize(axis_[1].size());
        for (std::size_t j = 0; j < axis_[1].size(); ++j) col[j] = components_[c].factors[1](axis_[1][j]);
      }
    }
  }

  void build_tables() {
    const int d = dim();
    if (d == 1) {
      row_values_.resize(axis_[0].size());
      Vec u(1);
      for (std::size_t i = 0; i < axis_[0].size(); ++i) {
        u[0] = axis_[0][i];
        row_values_[i] = unnormalized(u);
      }
    } else {
      row_values_.resize(axis_[0].size());
      for (std::size_t i = 0; i < axis_[0].size(); ++i) {
        const auto row = grid_row(i);
        row_values_[i] = cumulative(axis_[1], row).back();
      }
    }
    cum_ = cumulative(axis_[0], row_values_);
    if (!(cum_.back() > 0) || !std::isfinite(cum_.back()))
      throw ParamError("density '" + name_ + "' has non-positive or non-finite mass");
    log_z_ = std::log(cum_.back());
  }

  void detect_constant() {
    const int d = dim();
    const int n = 33;
    double mn = kInf, mx = -kInf;
    Vec u(d);
    const std::size_t total = d == 1 ? n : n * n;
    for (std::size_t k = 0; k < total; ++k) {
      for (int a = 0; a < d; ++a) {
        const std::size_t idx = a == 0 ? k % n : k / n;
        const auto i = static_cast<std::size_t>(a);
        u[a] = grid_box_.lo[i] + (grid_box_.hi[i] - grid_box_.lo[i]) * static_cast<double>(idx) / (n - 1);
      }
      const double v = unnormalized(u);
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
    constant_ = mx - mn <= 1e-12 * mx;
  }

  std::string name_;
  json params_;
  Box support_;
  Box grid_box_;
  std::vector<DensityComponent> components_;
  std::optional<VonMisesShape> von_mises_;
  int resolution_;

  std::vector<std::vector<double>> axis_;
  std::vector<std::vector<double>> factor_cache_;
  /// 1D: density values at the nodes; 2D: row integrals over u2.
  std::vector<double> row_values_;
  std::vector<double> cum_;
  double log_z_ = 0.0;
  bool constant_ = false;
};

// ---------------------------------------------------------------------------
// Binary grid cache: magic, key length, key, log Z, n, row values, cumulative.
// ---------------------------------------------------------------------------

inline void LatentDensity::save_cache(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  const std::string key = content_key();
  std::ofstream out(dir / (key + ".bin"), std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write density cache in '" + dir.string() + "'");
  const char magic[8] = {'I', 'D', 'L', 'A', 'T', 'N', 'T', '1'};
  out.write(magic, 8);
  const std::uint64_t klen = key.size(), n = row_values_.size();
  out.write(reinterpret_cast<const char*>(&klen), sizeof klen);
  out.write(key.data(), static_cast<std::streamsize>(klen));
  out.write(reinterpret_cast<const char*>(&log_z_), sizeof log_z_);
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  out.write(reinterpret_cast<const char*>(row_values_.data()), static_cast<std::streamsize>(n * sizeof(double)));
  out.write(reinterpret_cast<const char*>(cum_.data()), static_cast<std::streamsize>(n * sizeof(double)));
}

inline bool LatentDensity::load_cache(const std::filesystem::path& dir) {
  const std::string key = content_key();
  std::ifstream in(dir / (key + ".bin"), std::ios::binary);
  if (!in) return false;
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "IDLATNT1", 8) != 0) return false;
  std::uint64_t klen = 0, n = 0;
  in.read(reinterpret_cast<char*>(&klen), sizeof klen);
  std::string stored(klen, '\0');
  in.read(stored.data(), static_cast<std::streamsize>(klen));
  if (stored != key) return false;
  double lz = 0.0;
  in.read(reinterpret_cast<char*>(&lz), sizeof lz);
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  if (!in || n != row_values_.size()) return false;
  std::vector<double> rv(n), cu(n);
  in.read(reinterpret_cast<char*>(rv.data()), static_cast<std::streamsize>(n * sizeof(double)));
  in.read(reinterpret_cast<char*>(cu.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) return false;
  row_values_ = std::move(rv);
  cum_ = std::move(cu);
  log_z_ = lz;
  return true;
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

namespace detail {

class ParamReader {
 public:
  explicit ParamReader(const json& p) : p_(p.is_null() ? json::object() : p) {
    if (!p_.is_object()) throw ParamError("density parameters must be a JSON object");
  }

  double num(const std::string& key, double def) {
    used_.push_back(key);
    if (!p_.contains(key)) {
      resolved_[key] = def;
      return def;
    }
    const auto& v = p_.at(key);
    if (!v.is_number()) throw ParamError("density parameter '" + key + "' must be a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ParamError("density parameter '" + key + "' is not finite");
    resolved_[key] = x;
    return x;
  }

  std::vector<std::vector<double>> table(const std::string& key, std::vector<std::vector<double>> def) {
    used_.push_back(key);
    if (p_.contains(key)) {
      try {
        def = p_.at(key).get<std::vector<std::vector<double>>>();
      } catch (const json::exception&) {
        throw ParamError("density parameter '" + key + "' must be a list of number lists");
      }
      for (const auto& r : def)
        for (double x : r)
          if (!std::isfinite(x)) throw ParamError("density parameter '" + key + "' is not finite");
    }
    resolved_[key] = def;
    return def;
  }

  std::vector<double> list(const std::string& key, std::vector<double> def) {
    used_.push_back(key);
    if (p_.contains(key)) {
      try {
        def = p_.at(key).get<std::vector<double>>();
      } catch (const json::exception&) {
        throw ParamError("density parameter '" + key + "' must be a list of numbers");
      }
      for (double x : def)
        if (!std::isfinite(x)) throw ParamError("density parameter '" + key + "' is not finite");
    }
    resolved_[key] = def;
    return def;
  }

  /// Rejects unknown keys and returns the resolved parameter record.
  json finish() const {
    for (auto it = p_.begin(); it != p_.end(); ++it)
      if (std::find(used_.begin(), used_.end(), it.key()) == used_.end())
        throw ParamError("unknown density parameter '" + it.key() + "'");
    return resolved_;
  }

 private:
  json p_;
  json resolved_ = json::object();
  std::vector<std::string> used_;
};

inline std::function<double(double)> von_mises_factor(double kappa, double freq, double mu) {
  return [=](double u) { return std::exp(kappa * std::cos(freq * u - mu)); };
}

/// sum_i exp(k1 cos(f1 u1 - a_i)) * exp(k2 cos(f2 (u2 - b_i)))-style mixtures.
inline std::vector<DensityComponent> product_mixture(double k1, double f1, double k2, double f2,
                                                     const std::vector<std::vector<double>>& centers,
                                                     bool second_axis_shift_inside) {
  std::vector<DensityComponent> out;
  for (const auto& row : centers) {
    if (row.size() != 2) throw ParamError("mixture centers must be (mu, m) pairs");
    DensityComponent c;
    c.factors.push_back(von_mises_factor(k1, f1, row[0]));
    const double shift = second_axis_shift_inside ? f2 * row[1] : row[1];
    c.factors.push_back(von_mises_factor(k2, f2, shift));
    out.push_back(std::move(c));
  }
  return out;
}

/// Point where exp(-rate * z) drops to 1e-12 of its maximum.
inline double exp_truncation(double rate) { return std::log(1e12) / rate; }

}  // namespace detail

/// Builds a registered latent density.
///
/// Registered names: uniform, vonmises, vonmises_mixture, s2_mixture4,
/// s2_correlated, t2_mixture3, t2_correlated, h2_exponential,
/// thin_spiral_exponential, swiss_mixture3, swiss_correlated, so2_mixture4,
/// vonmises_product_mixture.
inline LatentDensity make_density(const std::string& spec_name, const json& params = json::object(),
                                  int resolution = kDensityGridPoints,
                                  const std::filesystem::path& cache_dir = {}) {
  detail::ParamReader p(params);
  auto box1 = [](double lo, double hi) {
    if (!(hi > lo)) throw ParamError("density domain must satisfy lo < hi");
    return Box{{lo}, {hi}};
  };
  if (spec_name == "uniform") {
    const double lo = p.num("lo", 0.0), hi = p.num("hi", 1.0);
    const double lo2 = p.num("lo2", kInf), hi2 = p.num("hi2", kInf);
    auto resolved = p.finish();
    if (std::isinf(lo2) && std::isinf(hi2)) {
      resolved.erase("lo2");
      resolved.erase("hi2");
      DensityComponent c;
      c.factors = {[](double) { return 1.0; }};
      const Box b = box1(lo, hi);
      return LatentDensity(spec_name, resolved, b, b, {c}, {}, resolution, cache_dir);
    }
    if (!(hi2 > lo2)) throw ParamError("density domain must satisfy lo2 < hi2");
    DensityComponent c;
    c.factors = {[](double) { return 1.0; }, [](double) { return 1.0; }};
    Box b{{lo, lo2}, {hi, hi2}};
    if (!(hi > lo)) throw ParamError("density domain must satisfy lo < hi");
    return LatentDensity(spec_name, resolved, b, b, {c}, {}, resolution, cache_dir);
  }
  if (spec_name == "vonmises") {
    const double kappa = p.num("kappa", 8.0), mu = p.num("mu", 0.0);
    const double lo = p.num("lo", -kPi / 2), hi = p.num("hi", kPi / 2);
    DensityComponent c;
    c.factors = {detail::von_mises_factor(kappa, 1.0, mu)};
    const Box b = box1(lo, hi);
    return LatentDensity(spec_name, p.finish(), b, b, {c}, VonMisesShape{kappa, mu}, resolution, cache_dir);
  }
  if (spec_name == "vonmises_mixture" || spec_name == "so2_mixture4") {
    const bool so2 = spec_name == "so2_mixture4";
    const double kappa = p.num("kappa", so2 ? 6.0 : 8.0);
    const auto mus = p.list("mus", so2 ? std::vector<double>{0.0, -kPi / 2, kPi / 2, kPi}
                                       : std::vector<double>{0.0});
    const double lo = p.num("lo", -kPi), hi = p.num("hi", kPi);
    std::vector<DensityComponent> comps;
    for (double mu : mus) {
      DensityComponent c;
      c.factors = {detail::von_mises_factor(kappa, 1.0, mu)};
      comps.push_back(std::move(c));
    }
    const Box b = box1(lo, hi);
    return LatentDensity(spec_name, p.finish(), b, b, std::move(comps), {}, resolution, cache_dir);
  }
  if (spec_name == "s2_mixture4") {
    const double kappa = p.num("kappa", 6.0);
    const auto centers = p.table("centers", {{kPi / 2, kPi / 4},
                                             {kPi / 2, 3 * kPi / 4},
                                             {3 * kPi / 2, kPi / 4},
                                             {3 * kPi / 2, 3 * kPi / 3}});
    auto comps = detail::product_mixture(kappa, 1.0, kappa, 2.0, centers, true);
    Box b{{0.0, 0.0}, {2 * kPi, kPi}};
    return LatentDensity(spec_name, p.finish(), b, b, std::move(comps), {}, resolution, cache_dir);
  }
  if (spec_name == "s2_correlated") {
    const double kappa = p.num("kappa", 6.0), kappa3 = p.num("kappa3", 50.0);
    const double m3 = p.num("m3", kPi / 2);
    const auto centers = p.table("centers", {{0.0, kPi / 2}, {kPi, 3 * kPi / 2}});
    auto comps = detail::product_mixture(kappa, 1.0, kappa, 2.0, centers, true);
    DensityComponent ring;
    ring.weight = 2.0 / (2 * kPi);
    ring.factors = {[](double) { return 1.0; }, detail::von_mises_factor(kappa3, 2.0, 2.0 * m3)};
    comps.push_back(std::move(ring));
    Box b{{0.0, 0.0}, {2 * kPi, kPi}};
    return LatentDensity(spec_name, p.finish(), b, b, std::move(comps), {}, resolution, cache_dir);
  }
  if (spec_name == "t2_mixture3") {
    const double kappa = p.num("kappa", 2.0);
    const auto centers = p.table("centers", {{0.21, 2.85}, {1.89, 6.18}, {3.77, 1.56}});
    auto comps = detail::product_mixture(kappa, 1.0, kappa, 1.0, centers, true);
    Box b{{0.0, 0.0}, {2 * kPi, 2 * kPi}};
    return LatentDensity(spec_name, p.finish(), b, b, std::move(comps), {}, resolution, cache_dir);
  }
  if (spec_name == "t2_correlated") {
    const double kappa = p.num("kappa", 2.0), c0 = p.num("c", 1.94);
    DensityComponent c;
    c.weight = 1.0 / (2 * kPi);
    c.joint = [=](const Vec& u) { return std::exp(kappa * std::cos(u[0] + u[1] - c0)); };
    Box b{{0.0, 0.0}, {2 * kPi, 2 * kPi}};
    return LatentDensity(spec_name, p.finish(), b, b, {c}, {}, resolution, cache_dir);
  }
  if (spec_name == "h2_exponential") {
    const double rate = p.num("rate", 0.5);
    if (!(rate > 0)) throw ParamError("rate must be positive");
    DensityComponent c;
    c.weight = 2.0 / (2 * kPi);
    c.factors = {[rate](double u) { return std::exp(-rate * u); }, [](double) { return 1.0; }};
    Box support{{0.0, 0.0}, {kInf, 2 * kPi}};
    Box grid{{0.0, 0.0}, {detail::exp_truncation(rate), 2 * kPi}};
    return LatentDensity(spec_name, p.finish(), support, grid, {c}, {}, resolution, cache_dir);
  }
  if (spec_name == "thin_spiral_exponential") {
    // Decaying reading of the listed rate-0.3 exponential; see README.
    const double rate = p.num("rate", 0.3);
    if (!(rate > 0)) throw ParamError("rate must be positive");
    DensityComponent c;
    c.weight = 1.0 / rate;
    c.factors = {[rate](double z) { return std::exp(-rate * z); }};
    Box support{{0.0}, {kInf}};
    Box grid{{0.0}, {detail::exp_truncation(rate)}};
    return LatentDensity(spec_name, p.finish(), support, grid, {c}, {}, resolution, cache_dir);
  }
  if (spec_name == "swiss_mixture3") {
    const double kappa = p.num("kappa", 6.0);
    const auto centers = p.table("centers", {{0.1, 0.1}, {0.5, 0.8}, {0.8, 0.8}});
    auto comps = detail::product_mixture(kappa, 2 * kPi, kappa, 2 * kPi, centers, false);
    Box b{{0.0, 0.0}, {1.0, 1.0}};
    return LatentDensity(spec_name, p.finish(), b, b, std::move(comps), {}, resolution, cache_dir);
  }
  if (spec_name == "swiss_correlated") {
    const double kappa = p.num("kappa", 6.0);
    DensityComponent c;
    c.joint = [=](const Vec& u) { return std::exp(kappa * std::cos(2 * kPi * (u[1] - u[0]))); };
    Box b{{0.0, 0.0}, {1.0, 1.0}};
    return LatentDensity(spec_name, p.finish(), b, b, {c}, {}, resolution, cache_dir);
  }
  if (spec_name == "vonmises_product_mixture") {
    const double k1 = p.num("kappa1", 6.0), k2 = p.num("kappa2", 6.0);
    const double f1 = p.num("freq1", 1.0), f2 = p.num("freq2", 1.0);
    const auto centers = p.table("centers", {{0.0, 0.0}});
    const double lo1 = p.num("lo1", 0.0), hi1 = p.num("hi1", 2 * kPi);
    const double lo2 = p.num("lo2", 0.0), hi2 = p.num("hi2", 2 * kPi);
    if (!(hi1 > lo1) || !(hi2 > lo2)) throw ParamError("density domain must satisfy lo < hi");
    auto comps = detail::product_mixture(k1, f1, k2, f2, centers, true);
    Box b{{lo1, lo2}, {hi1, hi2}};
    return LatentDensity(spec_name, p.finish(), b, b, std::move(comps), {}, resolution, cache_dir);
  }
  throw UnknownDensityError("unknown latent density '" + spec_name + "'");
}

inline std::vector<std::string> density_names() {
  return {"uniform",      "vonmises",       "vonmises_mixture", "s2_mixture4",
          "s2_correlated", "t2_mixture3",   "t2_correlated",    "h2_exponential",
          "thin_spiral_exponential", "swiss_mixture3", "swiss_correlated", "so2_mixture4",
          "vonmises_product_mixture"};
}

}  // namespace infdef

#endif  // INFDEF_LATENT_HPP_
