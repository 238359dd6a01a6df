#ifndef INFDEF_EXPERIMENT_HPP_
#define INFDEF_EXPERIMENT_HPP_

// Config-driven experiment runner: data generation, sigma^2 sweeps of
// inflate -> train -> deflate -> KS, variance bounds, the latent-space
// baseline, the flow-free oracle and the reachability check. Every artifact is
// tagged with the config content hash.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "infdef/baseline.hpp"
#include "infdef/bounds.hpp"
#include "infdef/deflation.hpp"
#include "infdef/inflation.hpp"
#include "infdef/train.hpp"

namespace infdef {

inline constexpr int kConfigSchemaVersion = 1;
/// Layout version of sweep.csv and summary.csv, recorded in config.json.
inline constexpr int kCsvSchemaVersion = 1;

namespace detail {

/// Strict reader over a JSON object: typed getters, unknown keys rejected.
class ConfigReader {
 public:
  ConfigReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  bool has(const std::string& k) const { return j_.contains(k); }

  const json& raw(const std::string& k) {
    used_.insert(k);
    return j_.at(k);
  }

  template <class T>
  T get(const std::string& k, T def) {
    if (!j_.contains(k)) return def;
    used_.insert(k);
    try {
      if constexpr (std::is_floating_point_v<T>) {
        if (!j_.at(k).is_number()) throw ConfigError(field(k), "expected a number");
      } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (!j_.at(k).is_number_integer()) throw ConfigError(field(k), "expected an integer");
        if constexpr (std::is_unsigned_v<T>)
          if (j_.at(k).get<long long>() < 0) throw ConfigError(field(k), "expected a non-negative integer");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!j_.at(k).is_boolean()) throw ConfigError(field(k), "expected true or false");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!j_.at(k).is_string()) throw ConfigError(field(k), "expected a string");
      }
      return j_.at(k).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(field(k), e.what());
    }
  }

  std::string field(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw ConfigError(field(it.key()), "unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

/// splitmix64 finaliser, used to derive independent RNG streams from a seed.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::string csv_safe(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return s;
}

inline json json_number(double v) { return std::isfinite(v) ? json(v) : json(fmt_double(v)); }

}  // namespace detail

/// Seed of the latent-draw stream for a run seed.
inline std::uint64_t latent_stream_seed(std::uint64_t seed) { return detail::mix_seed(2 * seed + 1); }
/// Base seed of the noise stream for a run seed.
inline std::uint64_t noise_stream_seed(std::uint64_t seed) { return detail::mix_seed(2 * seed + 2); }

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Noise law selection. kind: nid, iid, chi2 (k), reach_ball (tau), interval (lo, hi).
struct NoiseSpec {
  std::string kind = "nid";
  double sigma2 = 0.01;
  int k = 3;
  double tau = 1.0;
  double lo = -1.0;
  double hi = 1.0;

  NoiseModel build(int d, int D) const { return build(d, D, sigma2); }

  NoiseModel build(int d, int D, double s2) const {
    if (kind == "nid") return normal_gaussian(s2, d, D);
    if (kind == "iid") return isotropic_gaussian(s2, d, D);
    if (kind == "chi2") return normal_chi_squared(k, d, D);
    if (kind == "reach_ball") return normal_uniform_ball(tau, d, D);
    if (kind == "interval") return normal_uniform_interval(lo, hi, d, D);
    throw ConfigError("noise.kind", "expected one of nid, iid, chi2, reach_ball, interval (got '" + kind + "')");
  }

  json to_json() const {
    if (kind == "nid" || kind == "iid") return {{"kind", kind}, {"sigma2", sigma2}};
    if (kind == "chi2") return {{"kind", kind}, {"k", k}};
    if (kind == "reach_ball") return {{"kind", kind}, {"tau", tau}};
    return {{"kind", kind}, {"lo", lo}, {"hi", hi}};
  }
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::string manifold = "s1";
  std::size_t chart = 0;
  std::string density = "vonmises";
  json density_params = json::object();
  NoiseSpec noise;
  /// Noise kinds compared in a sweep.
  std::vector<std::string> methods = {"nid", "iid"};
  std::vector<double> sigma2_grid;
  std::size_t n_train = 100000;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::string preset = "desk";
  /// Overrides of preset fields: hidden_dim, n_hidden_layers, init_gate and any TrainConfig field.
  json flow = json::object();
  std::vector<int> eval_resolution;
  std::size_t bounds_samples = 10000;
  std::string fom_method = "auto";
  std::size_t reach_probes = 1000;
  int reach_resolution = 64;
  /// Not part of the content hash.
  std::string output_dir;
  int workers = 1;

  /// Desk default: 12 log-spaced values over [1e-9, 10].
  static std::vector<double> default_sigma2_grid() { return logspace(-9.0, 1.0, 12); }

  static ExperimentConfig from_json(const json& j) {
    detail::ConfigReader r(j, "");
    ExperimentConfig c;
    if (!j.contains("schema_version")) throw ConfigError("schema_version", "missing");
    const int v = r.get<int>("schema_version", 0);
    if (v != kConfigSchemaVersion)
      throw ConfigError("schema_version", "unsupported version " + std::to_string(v) + " (expected " +
                                              std::to_string(kConfigSchemaVersion) + ")");
    c.name = r.get<std::string>("name", c.name);
    c.manifold = r.get<std::string>("manifold", c.manifold);
    c.chart = r.get<std::size_t>("chart", c.chart);
    if (r.has("density")) {
      detail::ConfigReader d(r.raw("density"), "density");
      c.density = d.get<std::string>("name", c.density);
      if (d.has("params")) {
        c.density_params = d.raw("params");
        if (!c.density_params.is_object()) throw ConfigError("density.params", "expected an object");
      }
      d.finish();
    }
    if (r.has("noise")) {
      detail::ConfigReader n(r.raw("noise"), "noise");
      c.noise.kind = n.get<std::string>("kind", c.noise.kind);
      c.noise.sigma2 = n.get<double>("sigma2", c.noise.sigma2);
      c.noise.k = n.get<int>("k", c.noise.k);
      c.noise.tau = n.get<double>("tau", c.noise.tau);
      c.noise.lo = n.get<double>("lo", c.noise.lo);
      c.noise.hi = n.get<double>("hi", c.noise.hi);
      n.finish();
    }
    if (r.has("methods")) {
      c.methods = r.get<std::vector<std::string>>("methods", {});
      if (c.methods.empty()) throw ConfigError("methods", "must not be empty");
      for (const auto& m : c.methods)
        if (m != "nid" && m != "iid") throw ConfigError("methods", "sweep methods are nid and iid (got '" + m + "')");
    }
    if (r.has("sigma2_grid")) {
      const json& g = r.raw("sigma2_grid");
      try {
        if (g.is_object()) {
          detail::ConfigReader gr(g, "sigma2_grid");
          const auto ls = gr.get<std::vector<double>>("logspace", {});
          gr.finish();
          if (ls.size() != 3 || ls[2] < 1 || ls[2] != std::floor(ls[2]))
            throw ConfigError("sigma2_grid.logspace", "expected [lo_exponent, hi_exponent, count]");
          c.sigma2_grid = logspace(ls[0], ls[1], static_cast<std::size_t>(ls[2]));
        } else {
          c.sigma2_grid = g.get<std::vector<double>>();
        }
      } catch (const json::exception& e) {
        throw ConfigError("sigma2_grid", e.what());
      }
    } else {
      c.sigma2_grid = default_sigma2_grid();
    }
    c.n_train = r.get<std::size_t>("n_train", c.n_train);
    if (r.has("seeds")) c.seeds = r.get<std::vector<std::uint64_t>>("seeds", {});
    c.preset = r.get<std::string>("preset", c.preset);
    if (r.has("flow")) {
      c.flow = r.raw("flow");
      if (!c.flow.is_object()) throw ConfigError("flow", "expected an object");
    }
    if (r.has("eval_resolution")) c.eval_resolution = r.get<std::vector<int>>("eval_resolution", {});
    c.bounds_samples = r.get<std::size_t>("bounds_samples", c.bounds_samples);
    c.fom_method = r.get<std::string>("fom_method", c.fom_method);
    c.reach_probes = r.get<std::size_t>("reach_probes", c.reach_probes);
    c.reach_resolution = r.get<int>("reach_resolution", c.reach_resolution);
    c.output_dir = r.get<std::string>("output_dir", c.output_dir);
    c.workers = r.get<int>("workers", c.workers);
    r.finish();
    c.validate();
    return c;
  }

  static ExperimentConfig from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", "cannot open config '" + path.string() + "'");
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("", path.string() + ": " + e.what());
    }
    return from_json(j);
  }

  void validate() const {
    if (sigma2_grid.empty()) throw ConfigError("sigma2_grid", "must not be empty");
    for (std::size_t i = 0; i < sigma2_grid.size(); ++i) {
      if (!(sigma2_grid[i] > 0) || !std::isfinite(sigma2_grid[i]))
        throw ConfigError("sigma2_grid", "values must be positive and finite");
      if (i > 0 && !(sigma2_grid[i] > sigma2_grid[i - 1]))
        throw ConfigError("sigma2_grid", "values must be strictly increasing");
    }
    if (seeds.empty()) throw ConfigError("seeds", "must not be empty");
    if (n_train < 1000) throw ConfigError("n_train", "must be >= 1000");
    if (bounds_samples < 2) throw ConfigError("bounds_samples", "must be >= 2");
    if (workers < 1) throw ConfigError("workers", "must be >= 1");
    if (reach_probes < 100) throw ConfigError("reach_probes", "must be >= 100");
    if (reach_resolution < 16) throw ConfigError("reach_resolution", "must be >= 16");
    fom_method_from_string(fom_method);
    auto as_config = [](const std::string& field, auto&& fn) {
      try {
        return fn();
      } catch (const ConfigError&) {
        throw;
      } catch (const Error& e) {
        throw ConfigError(field, e.what());
      }
    };
    const auto m = as_config("manifold", [&] { return make_manifold(manifold); });
    as_config("chart", [&] { return m.chart(chart); });
    const auto p = as_config("density.name", [&] {
      try {
        return make_density(density, density_params, 257);
      } catch (const UnknownDensityError&) {
        throw;
      } catch (const Error& e) {
        throw ConfigError("density.params", e.what());
      }
    });
    if (p.dim() != m.d) throw ConfigError("density", "latent dimension does not match the manifold");
    if (!eval_resolution.empty() && static_cast<int>(eval_resolution.size()) != m.d)
      throw ConfigError("eval_resolution", "needs one entry per latent axis");
    as_config("noise", [&] { return noise.build(m.d, m.D); });
    as_config("preset", [&] { return flow_preset(preset, m.D, m.d); });
    preset_for(m.D, m.d);
  }

  /// Preset with the `flow` overrides applied, for a flow on R^D.
  FlowPreset preset_for(int D, int d, bool architecture_overrides = true) const {
    FlowPreset p = flow_preset(preset, D, d);
    detail::ConfigReader r(flow, "flow");
    if (architecture_overrides) {
      p.arch.hidden_dim = r.get<int>("hidden_dim", p.arch.hidden_dim);
      p.arch.n_hidden_layers = r.get<int>("n_hidden_layers", p.arch.n_hidden_layers);
      p.arch.init_gate = r.get<double>("init_gate", p.arch.init_gate);
    } else {
      r.get<int>("hidden_dim", 0);
      r.get<int>("n_hidden_layers", 0);
      r.get<double>("init_gate", 0.0);
    }
    auto& t = p.train;
    t.batch_size = r.get<std::size_t>("batch_size", t.batch_size);
    t.max_iterations = r.get<std::size_t>("max_iterations", t.max_iterations);
    t.initial_lr = r.get<double>("initial_lr", t.initial_lr);
    t.lr_decay = r.get<double>("lr_decay", t.lr_decay);
    t.lr_patience = r.get<std::size_t>("lr_patience", t.lr_patience);
    t.amsgrad = r.get<bool>("amsgrad", t.amsgrad);
    t.clip_norm = r.get<double>("clip_norm", t.clip_norm);
    t.validation_fraction = r.get<double>("validation_fraction", t.validation_fraction);
    t.validation_interval = r.get<std::size_t>("validation_interval", t.validation_interval);
    t.improvement_threshold = r.get<double>("improvement_threshold", t.improvement_threshold);
    r.finish();
    try {
      p.arch.validate();
      t.validate();
    } catch (const ParamError& e) {
      throw ConfigError("flow", e.what());
    }
    return p;
  }

  /// Canonical form; output_dir and workers are excluded.
  json to_json() const {
    return {{"schema_version", kConfigSchemaVersion},
            {"name", name},
            {"manifold", manifold},
            {"chart", chart},
            {"density", {{"name", density}, {"params", density_params}}},
            {"noise", noise.to_json()},
            {"methods", methods},
            {"sigma2_grid", sigma2_grid},
            {"n_train", n_train},
            {"seeds", seeds},
            {"preset", preset},
            {"flow", flow},
            {"eval_resolution", eval_resolution},
            {"bounds_samples", bounds_samples},
            {"fom_method", fom_method},
            {"reach_probes", reach_probes},
            {"reach_resolution", reach_resolution}};
  }

  std::string hash() const { return content_hash(to_json()); }
};

// ---------------------------------------------------------------------------
// Shared pieces
// ---------------------------------------------------------------------------

struct Dataset {
  Samples u;
  Samples x;
  Samples x_tilde;
};

/// Latent draws come from the latent stream, noise from the noise stream, so
/// two noise kinds at equal seeds share u and x.
inline Dataset make_dataset(const ManifoldSpec& m, const LatentDensity& p, const NoiseModel& noise, std::size_t n,
                            std::uint64_t seed) {
  Dataset d;
  d.u = p.sample(n, latent_stream_seed(seed));
  d.x.resize(d.u.rows(), m.D);
  for (Eigen::Index i = 0; i < d.u.rows(); ++i) {
    const Vec u = d.u.row(i).transpose();
    d.x.row(i) = embed(m, m.select_chart(u), u).transpose();
  }
  d.x_tilde = inflate_batch(noise, m, d.u, noise_stream_seed(seed));
  return d;
}

struct Experiment {
  ExperimentConfig cfg;
  ManifoldSpec manifold;
  LatentDensity density;
  LatentGrid grid;

  explicit Experiment(ExperimentConfig c)
      : cfg(std::move(c)), manifold(make_manifold(cfg.manifold)), density(make_density(cfg.density, cfg.density_params)) {
    grid = default_grid(density, manifold, cfg.chart);
    if (!cfg.eval_resolution.empty()) grid = evaluation_grid(grid_box(), cfg.eval_resolution);
  }

  /// Density grid box intersected with the chart domain.
  Box grid_box() const {
    Box b = density.grid_box();
    const Box& cd = manifold.chart(cfg.chart).domain;
    for (std::size_t k = 0; k < b.dim(); ++k) {
      b.lo[k] = std::max(b.lo[k], cd.lo[k]);
      b.hi[k] = std::min(b.hi[k], cd.hi[k]);
    }
    return b;
  }
};

/// Creates `out` and records the config, or checks that it already holds the same config.
inline void prepare_output_dir(const ExperimentConfig& cfg, const std::filesystem::path& out) {
  namespace fs = std::filesystem;
  fs::create_directories(out);
  const fs::path cj = out / "config.json";
  const std::string h = cfg.hash();
  if (fs::exists(cj)) {
    std::ifstream in(cj);
    json prev;
    try {
      prev = json::parse(in);
    } catch (const json::exception&) {
      throw ConfigError("output_dir", "unreadable " + cj.string());
    }
    if (prev.value("config_hash", "") != h)
      throw ConfigError("output_dir", out.string() + " holds results of a different config (hash " +
                                          prev.value("config_hash", "?") + ", this config " + h + ")");
    return;
  }
  json j = cfg.to_json();
  j["config_hash"] = h;
  j["csv_schema_version"] = kCsvSchemaVersion;
  std::ofstream(cj, std::ios::binary) << j.dump(2) << "\n";
}

inline void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

/// Writes u.csv, x.csv, x_tilde.csv and meta.json for the first seed.
inline json run_generate(const ExperimentConfig& cfg, const std::filesystem::path& out) {
  prepare_output_dir(cfg, out);
  const Experiment e(cfg);
  const auto noise = cfg.noise.build(e.manifold.d, e.manifold.D);
  const std::uint64_t seed = cfg.seeds.front();
  const Dataset d = make_dataset(e.manifold, e.density, noise, cfg.n_train, seed);
  auto names = [](const std::string& p, Eigen::Index n) {
    std::vector<std::string> h;
    for (Eigen::Index i = 0; i < n; ++i) h.push_back(p + std::to_string(i));
    return h;
  };
  write_samples_csv((out / "u.csv").string(), d.u, names("u", d.u.cols()));
  write_samples_csv((out / "x.csv").string(), d.x, names("x", d.x.cols()));
  write_samples_csv((out / "x_tilde.csv").string(), d.x_tilde, names("x", d.x_tilde.cols()));
  json meta = {{"config_hash", cfg.hash()},
               {"seed", seed},
               {"latent_stream_seed", latent_stream_seed(seed)},
               {"noise_stream_seed", noise_stream_seed(seed)},
               {"noise", noise.tag()},
               {"noise_params", cfg.noise.to_json()},
               {"n", cfg.n_train},
               {"manifold", e.manifold.name},
               {"density", e.density.metadata()}};
  write_json(out / "meta.json", meta);
  return meta;
}

// ---------------------------------------------------------------------------
// bounds
// ---------------------------------------------------------------------------

struct BoundsResult {
  SigmaLowerReport lower;
  SigmaUpperReport upper;

  json to_json(const std::string& hash) const {
    return {{"config_hash", hash},
            {"sigma_lower", lower.squared},
            {"sigma_lower_raw", lower.raw},
            {"sigma_upper", detail::json_number(upper.value)},
            {"sigma_upper_stderr", upper.std_error},
            {"n", upper.n}};
  }
};

inline BoundsResult compute_bounds(const Experiment& e) {
  const std::uint64_t seed = e.cfg.seeds.front();
  const Samples u = e.density.sample(e.cfg.bounds_samples, latent_stream_seed(seed));
  Samples x(u.rows(), e.manifold.D);
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    const Vec ui = u.row(i).transpose();
    x.row(i) = embed(e.manifold, e.manifold.select_chart(ui), ui).transpose();
  }
  return {sigma_lower_bound(x), sigma_upper_bound(e.manifold, e.cfg.chart, e.density, e.cfg.bounds_samples, seed)};
}

inline json run_bounds(const ExperimentConfig& cfg, const std::filesystem::path& out) {
  prepare_output_dir(cfg, out);
  const Experiment e(cfg);
  const json j = compute_bounds(e).to_json(cfg.hash());
  write_json(out / "bounds.json", j);
  return j;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

struct SweepRow {
  std::string method;
  double sigma2 = 0.0;
  std::uint64_t seed = 0;
  std::string status = "ok";
  double ks = kInf;
  double best_val_nll = kInf;
  double sigma_lower = 0.0;
  double sigma_lower_raw = 0.0;
  double sigma_upper = kInf;
  double wall_time_s = 0.0;
  std::string checkpoint;

  std::string key() const { return method + "|" + fmt_double(sigma2) + "|" + std::to_string(seed); }
};

inline const char* kSweepHeader =
    "config_hash,method,sigma2,seed,status,ks,best_val_nll,sigma_lower,sigma_lower_raw,sigma_upper,wall_time_s,"
    "checkpoint";

inline std::string sweep_line(const std::string& hash, const SweepRow& r) {
  std::ostringstream os;
  os << hash << ',' << r.method << ',' << fmt_double(r.sigma2) << ',' << r.seed << ',' << detail::csv_safe(r.status)
     << ',' << fmt_double(r.ks) << ',' << fmt_double(r.best_val_nll) << ',' << fmt_double(r.sigma_lower) << ','
     << fmt_double(r.sigma_lower_raw) << ',' << fmt_double(r.sigma_upper) << ',' << fmt_double(r.wall_time_s) << ','
     << r.checkpoint;
  return os.str();
}

/// Reads sweep.csv rows; rejects rows written under another config hash.
inline std::vector<SweepRow> read_sweep_csv(const std::filesystem::path& path, const std::string& hash) {
  std::vector<SweepRow> rows;
  std::ifstream in(path);
  if (!in) return rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 12) continue;  // torn final line of an interrupted run
    if (f[0] != hash) throw ConfigError("output_dir", path.string() + " contains rows of config " + f[0]);
    SweepRow r;
    r.method = f[1];
    r.sigma2 = parse_double(f[2]);
    r.seed = std::stoull(f[3]);
    r.status = f[4];
    r.ks = parse_double(f[5]);
    r.best_val_nll = parse_double(f[6]);
    r.sigma_lower = parse_double(f[7]);
    r.sigma_lower_raw = parse_double(f[8]);
    r.sigma_upper = parse_double(f[9]);
    r.wall_time_s = parse_double(f[10]);
    r.checkpoint = f[11];
    rows.push_back(r);
  }
  return rows;
}

struct SweepOptions {
  /// Stop after this many newly computed cells (simulates an interrupted run).
  std::size_t max_cells = static_cast<std::size_t>(-1);
  /// Progress lines; silent when empty.
  std::function<void(const std::string&)> log;
};

struct SweepSummaryRow {
  std::string method;
  double sigma2 = 0.0;
  std::size_t n_ok = 0;
  double ks_mean = kInf;
  double ks_stderr = 0.0;
};

/// Mean and standard error of the KS over ok rows, per (method, sigma2) in order of first appearance.
inline std::vector<SweepSummaryRow> summarize_sweep(const std::vector<SweepRow>& rows) {
  std::vector<std::pair<std::string, double>> keys;
  std::map<std::pair<std::string, double>, std::vector<double>> groups;
  for (const auto& r : rows) {
    const auto k = std::make_pair(r.method, r.sigma2);
    if (!groups.count(k)) keys.push_back(k);
    auto& g = groups[k];
    if (r.status == "ok") g.push_back(r.ks);
  }
  std::vector<SweepSummaryRow> out;
  for (const auto& k : keys) {
    const auto& v = groups[k];
    SweepSummaryRow s{k.first, k.second, v.size(), kInf, 0.0};
    if (!v.empty()) {
      double m = 0;
      for (double x : v) m += x;
      m /= static_cast<double>(v.size());
      double ss = 0;
      for (double x : v) ss += (x - m) * (x - m);
      s.ks_mean = m;
      s.ks_stderr = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size())) : 0.0;
    }
    out.push_back(s);
  }
  return out;
}

/// One sweep cell: inflate, train, deflate, induce the latent density and compare.
inline SweepRow run_sweep_cell(const Experiment& e, const std::string& method, double sigma2, std::uint64_t seed,
                               const BoundsResult& bounds, const std::filesystem::path& out) {
  namespace fs = std::filesystem;
  SweepRow row;
  row.method = method;
  row.sigma2 = sigma2;
  row.seed = seed;
  row.sigma_lower = bounds.lower.squared;
  row.sigma_lower_raw = bounds.lower.raw;
  row.sigma_upper = bounds.upper.value;
  const auto t0 = std::chrono::steady_clock::now();
  const std::string stem = method + "_s2=" + fmt_double(sigma2) + "_seed=" + std::to_string(seed);
  try {
    const auto& m = e.manifold;
    const NoiseModel noise = NoiseSpec{method}.build(m.d, m.D, sigma2);
    const Dataset d = make_dataset(m, e.density, noise, e.cfg.n_train, seed);
    const FlowPreset preset = e.cfg.preset_for(m.D, m.d);
    TrainConfig tc = preset.train;
    tc.seed = seed;
    const TrainResult tr = train(FlowModel(preset.arch, seed), Mat(d.x_tilde), tc);
    row.best_val_nll = tr.best_val_nll;
    const auto est = deflate(tr.flow, noise, {{"manifold", m.name}, {"seed", seed}});
    const auto truth = true_latent(e.density, e.grid);
    const auto hat = induced_latent(est, m, e.cfg.chart, e.grid);
    row.ks = ks_statistic(truth, hat).ks;
    fs::create_directories(out / "checkpoints");
    fs::create_directories(out / "grids");
    fs::create_directories(out / "traces");
    row.checkpoint = (fs::path("checkpoints") / (stem + ".bin")).string();
    save_checkpoint((out / row.checkpoint).string(), tr.flow,
                    {{"config_hash", e.cfg.hash()}, {"method", method}, {"sigma2", sigma2}, {"seed", seed},
                     {"best_iter", tr.best_iter}, {"best_val_nll", tr.best_val_nll}, {"noise", noise.tag()}});
    write_gridded_csv(out / "grids" / (stem + ".csv"), {"pi_true", "pi_hat"}, {&truth, &hat});
    write_trace_csv((out / "traces" / (stem + ".csv")).string(), tr.trace);
  } catch (const DivergenceError& ex) {
    row.status = std::string("diverged: ") + ex.what();
  } catch (const NumericalError& ex) {
    row.status = std::string("numerical: ") + ex.what();
  }
  row.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return row;
}

/// Runs every (method, sigma2, seed) cell not already present in sweep.csv.
/// Rows are appended as cells finish; at the end sweep.csv is rewritten in
/// canonical order and summary.csv holds per-(method, sigma2) mean and stderr.
inline std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const std::filesystem::path& out,
                                       const SweepOptions& opt = {}) {
  namespace fs = std::filesystem;
  prepare_output_dir(cfg, out);
  const Experiment e(cfg);
  const std::string hash = cfg.hash();

  BoundsResult bounds = compute_bounds(e);
  write_json(out / "bounds.json", bounds.to_json(hash));

  const fs::path csv = out / "sweep.csv";
  std::vector<SweepRow> rows = read_sweep_csv(csv, hash);
  {
    // rewrite without any torn tail before appending
    std::ofstream f(csv, std::ios::binary | std::ios::trunc);
    f << kSweepHeader << "\n";
    for (const auto& r : rows) f << sweep_line(hash, r) << "\n";
  }
  std::set<std::string> done;
  for (const auto& r : rows) done.insert(r.key());

  struct Cell {
    std::string method;
    double sigma2;
    std::uint64_t seed;
  };
  std::vector<Cell> todo;
  for (const auto& m : cfg.methods)
    for (double s2 : cfg.sigma2_grid)
      for (std::uint64_t seed : cfg.seeds) {
        SweepRow probe;
        probe.method = m;
        probe.sigma2 = s2;
        probe.seed = seed;
        if (!done.count(probe.key())) todo.push_back({m, s2, seed});
      }
  if (todo.size() > opt.max_cells) todo.resize(opt.max_cells);

  std::mutex mu;
  std::ofstream append(csv, std::ios::binary | std::ios::app);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next++;
      if (i >= todo.size()) return;
      const auto& c = todo[i];
      SweepRow r = run_sweep_cell(e, c.method, c.sigma2, c.seed, bounds, out);
      std::lock_guard<std::mutex> lock(mu);
      append << sweep_line(hash, r) << "\n";
      append.flush();
      rows.push_back(r);
      if (opt.log)
        opt.log("[" + std::to_string(rows.size()) + "] " + r.method + " sigma2=" + fmt_double(r.sigma2) +
                " seed=" + std::to_string(r.seed) + " ks=" + fmt_double(r.ks) + " " + r.status);
    }
  };
  const int nw = std::max(1, std::min<int>(cfg.workers, static_cast<int>(todo.size())));
  std::vector<std::thread> pool;
  for (int w = 1; w < nw; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  append.close();

  std::map<std::string, std::size_t> order;
  std::size_t k = 0;
  for (const auto& m : cfg.methods)
    for (double s2 : cfg.sigma2_grid)
      for (std::uint64_t seed : cfg.seeds) {
        SweepRow probe;
        probe.method = m;
        probe.sigma2 = s2;
        probe.seed = seed;
        order[probe.key()] = k++;
      }
  std::sort(rows.begin(), rows.end(), [&](const SweepRow& a, const SweepRow& b) {
    return order[a.key()] < order[b.key()];
  });
  {
    const fs::path tmp = out / "sweep.csv.tmp";
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    f << kSweepHeader << "\n";
    for (const auto& r : rows) f << sweep_line(hash, r) << "\n";
    f.close();
    fs::rename(tmp, csv);
  }
  {
    std::ofstream f(out / "summary.csv", std::ios::binary | std::ios::trunc);
    f << "config_hash,method,sigma2,n_ok,ks_mean,ks_stderr\n";
    for (const auto& s : summarize_sweep(rows))
      f << hash << ',' << s.method << ',' << fmt_double(s.sigma2) << ',' << s.n_ok << ',' << fmt_double(s.ks_mean)
        << ',' << fmt_double(s.ks_stderr) << "\n";
  }
  return rows;
}

// ---------------------------------------------------------------------------
// baseline-fom
// ---------------------------------------------------------------------------

/// Fits the latent-space baseline for every seed; writes fom.json and one grid per seed.
inline json run_fom(const ExperimentConfig& cfg, const std::filesystem::path& out) {
  prepare_output_dir(cfg, out);
  const Experiment e(cfg);
  const int d = e.manifold.d;
  const FlowPreset preset = [&] {
    FlowPreset p = cfg.preset_for(d, d, false);
    const FlowPreset base = flow_preset(cfg.preset, d, d);
    p.arch = base.arch;
    return p;
  }();
  const auto truth = true_latent(e.density, e.grid);
  json runs = json::array();
  double sum = 0.0;
  std::string method;
  for (std::uint64_t seed : cfg.seeds) {
    const Samples u = e.density.sample(cfg.n_train, latent_stream_seed(seed));
    const auto r = fom_baseline(u, e.density, e.grid, fom_method_from_string(cfg.fom_method), preset.arch,
                                preset.train, seed);
    const double ks = ks_statistic(truth, r.density).ks;
    sum += ks;
    method = r.method;
    write_gridded_csv(out / ("fom_grid_seed=" + std::to_string(seed) + ".csv"), {"pi_true", "pi_hat"},
                      {&truth, &r.density});
    runs.push_back({{"seed", seed}, {"ks", ks}, {"bandwidth", r.bandwidth},
                    {"best_val_nll", detail::json_number(r.best_val_nll)}});
  }
  const json j = {{"config_hash", cfg.hash()},
                  {"method", method},
                  {"ks", sum / static_cast<double>(cfg.seeds.size())},
                  {"runs", runs}};
  write_json(out / "fom.json", j);
  return j;
}

// ---------------------------------------------------------------------------
// oracle-deflate
// ---------------------------------------------------------------------------

/// Flow-free pipeline check on the analytic inflated density. `constant_scale`
/// != 1 injects a wrong deflation constant; the KS then reflects the mass deficit.
inline json run_oracle_deflate(const ExperimentConfig& cfg, const std::filesystem::path& out,
                               double constant_scale = 1.0) {
  prepare_output_dir(cfg, out);
  const Experiment e(cfg);
  const auto noise = cfg.noise.build(e.manifold.d, e.manifold.D);
  const auto est = deflate(analytic_inflated_log_density(e.manifold, cfg.chart, e.density, noise, constant_scale), noise);
  const auto truth = true_latent(e.density, e.grid);
  const auto hat = induced_latent(est, e.manifold, cfg.chart, e.grid);
  const auto rep = ks_statistic(truth, hat);
  write_gridded_csv(out / "oracle_grid.csv", {"pi_true", "pi_hat"}, {&truth, &hat});
  json j = rep.to_json();
  j["config_hash"] = cfg.hash();
  j["constant_scale"] = constant_scale;
  j["noise"] = noise.tag();
  j["dropped_points"] = hat.dropped.size();
  write_json(out / "oracle.json", j);
  return j;
}

// ---------------------------------------------------------------------------
// reachability
// ---------------------------------------------------------------------------

inline json run_reachability(const ExperimentConfig& cfg, const std::filesystem::path& out) {
  prepare_output_dir(cfg, out);
  const Experiment e(cfg);
  const auto noise = cfg.noise.build(e.manifold.d, e.manifold.D);
  if (!noise.is_normal()) throw ConfigError("noise.kind", "reachability needs a normal-space noise kind");
  const auto rep = reachability_check(e.manifold, noise, e.density, cfg.reach_probes, cfg.reach_resolution,
                                      cfg.seeds.front());
  json examples = json::array();
  for (const auto& ex : rep.examples) {
    json gens = json::array();
    for (const auto& g : ex.generators)
      gens.push_back({{"chart", g.chart_index},
                      {"u", std::vector<double>(g.u.data(), g.u.data() + g.u.size())},
                      {"v", std::vector<double>(g.v.data(), g.v.data() + g.v.size())},
                      {"distance", g.distance}});
    examples.push_back(
        {{"x_tilde", std::vector<double>(ex.x_tilde.data(), ex.x_tilde.data() + ex.x_tilde.size())}, {"generators", gens}});
  }
  const json j = {{"config_hash", cfg.hash()},     {"noise", noise.tag()},
                  {"noise_params", cfg.noise.to_json()}, {"violation_fraction", rep.violation_fraction},
                  {"n_probes", rep.n_probes},      {"n_violations", rep.n_violations},
                  {"examples", examples}};
  write_json(out / "reachability.json", j);
  return j;
}

}  // namespace infdef

#endif  // INFDEF_EXPERIMENT_HPP_
