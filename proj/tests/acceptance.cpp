// Acceptance checks: one PASS/FAIL line per criterion.
//
//   acceptance [name ...] [--artifacts DIR]
//
// Runs every criterion unless names are given. The exit status is non-zero
// only when a criterion outside kKnownRed fails; known-red criteria still
// print FAIL with the reason.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "infdef/experiment.hpp"
#include "oracles.hpp"

using namespace infdef;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  std::function<Verdict()> run;
};

/// Criteria expected to fail: geometry conflicts with the reference tables, and
/// higher_d needs flows far larger than the single-core budget allows (see README).
const std::set<std::string> kKnownRed = {"geometry", "higher_d"};

std::filesystem::path g_artifacts = std::filesystem::temp_directory_path() / "infdef_acceptance";

std::string num(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

Vec v1(double a) { return Vec::Constant(1, a); }

// ---------------------------------------------------------------------------
// Geometry: table formulas for the Gram determinant, analytic vs FD Jacobians.
// ---------------------------------------------------------------------------

struct TableRow {
  std::string manifold;
  std::size_t chart;
  /// Whether the table lists det G (true) or its square root (false).
  bool lists_det;
  std::function<double(const Vec&)> formula;
};

std::vector<TableRow> table_rows() {
  using std::cos, std::sin, std::sinh, std::cosh, std::abs, std::sqrt;
  return {
      {"s1", 0, false, [](const Vec&) { return 3.0; }},
      {"s2", 0, false, [](const Vec& z) { return sin(z[1]); }},
      {"t2", 0, false, [](const Vec& z) { return 0.6 * (1 + 0.6 * cos(z[1])); }},
      {"h2", 0, true,
       [](const Vec& z) { return (sinh(z[0]) * sinh(z[0]) + cosh(z[0]) * cosh(z[0])) * sinh(z[0]) * sinh(z[0]); }},
      {"thin_spiral", 0, false,
       [](const Vec& z) {
         const double s = 3 * kPi * sqrt(z[0]);
         return (1 + s * s) / (s * s);
       }},
      {"swiss_roll", 0, false, [](const Vec& z) { return 63 * kPi * sqrt(1 + std::pow(0.5 + 2 * z[1], 2)); }},
      {"hs2", 0, true,
       [](const Vec& z) {
         const double a = abs(z[0]);
         return (sinh(a) * sinh(a) + cosh(a) * cosh(a)) * cosh(a) * cosh(a);
       }},
      {"hs2", 1, false, [](const Vec& z) { return abs(cos(z[0] + kPi)); }},
  };
}

Verdict geometry() {
  std::vector<std::string> bad;
  double worst_ok = 0.0;
  for (const auto& row : table_rows()) {
    const auto m = make_manifold(row.manifold);
    double worst = 0.0;
    for (const Vec& u : oracle::interior_points(m, row.chart, 1000, 17)) {
      const double g = gram_det(m, row.chart, u);
      const double have = row.lists_det ? g : std::sqrt(g);
      const double want = row.formula(u);
      worst = std::max(worst, std::abs(have - want) / std::max(1.0, std::abs(want)));
    }
    const std::string label = row.manifold + (m.charts.size() > 1 ? "/chart" + std::to_string(row.chart) : "");
    if (worst > 1e-8)
      bad.push_back(label + " rel " + num(worst, 2));
    else
      worst_ok = std::max(worst_ok, worst);
  }
  double worst_jac = 0.0;
  for (const std::string name : {"s1", "s2", "t2", "h2", "thin_spiral", "swiss_roll", "hs2", "so2"}) {
    const auto m = make_manifold(name);
    for (std::size_t ci = 0; ci < m.charts.size(); ++ci)
      for (const Vec& u : oracle::interior_points(m, ci, 1000, 23)) {
        const Mat a = jacobian(m, ci, u);
        const Mat f = fd_chart_jacobian(m, ci, u);
        worst_jac = std::max(worst_jac, (a - f).norm() / std::max(1.0, a.norm()));
      }
  }
  if (worst_jac > 1e-5) bad.push_back("jacobian rel " + num(worst_jac, 2));
  std::string detail = "table rows max rel err " + num(worst_ok, 2) + " (matching rows), jacobian max rel err " +
                       num(worst_jac, 2);
  for (const auto& b : bad) detail += "; mismatch " + b;
  return {bad.empty(), detail};
}

// ---------------------------------------------------------------------------
// Lemma: Gram determinant of the inflated chart at v = 0.
// ---------------------------------------------------------------------------

Verdict lemma() {
  double worst = 0.0;
  for (const std::string name : {"s1", "s1:D=5", "s2", "t2", "h2", "thin_spiral", "swiss_roll", "hs2", "so2"}) {
    const auto m = make_manifold(name);
    for (std::size_t ci = 0; ci < m.charts.size(); ++ci)
      for (const Vec& u : oracle::interior_points(m, ci, 100, 29)) {
        const double lhs = oracle::inflated_chart_gram_det(m, ci, u);
        worst = std::max(worst, std::abs(lhs / gram_det(m, ci, u) - 1.0));
      }
  }
  return {worst <= 1e-4, "max rel err " + num(worst, 2) + " (tol 1e-4)"};
}

// ---------------------------------------------------------------------------
// Tangential vs normal error of isotropic noise.
// ---------------------------------------------------------------------------

Verdict error_law() {
  bool ok = true;
  std::string detail;
  for (int D : {5, 10, 20}) {
    const auto m = make_manifold("s1:D=" + std::to_string(D));
    const auto r = gaussian_vs_normal_error_mc(m, 0, v1(0.4), 1.0, 1'000'000, 100 + D);
    const double want = gaussian_vs_normal_error(1, D);
    const double z = std::abs(r.mean - want) / r.std_error;
    ok = ok && z <= 3.0;
    detail += "D=" + std::to_string(D) + " mean " + num(r.mean, 5) + " vs " + num(want, 5) + " (" + num(z, 2) + " SE); ";
  }
  return {ok, detail + "tol 3 SE at n=1e6"};
}

// ---------------------------------------------------------------------------
// Flow-free deflation.
// ---------------------------------------------------------------------------

double oracle_ks(const std::string& manifold, const std::string& density, const NoiseModel& noise) {
  const auto m = make_manifold(manifold);
  const auto p = make_density(density, density == "vonmises" ? json{{"kappa", 8.0}} : json::object());
  const auto grid = default_grid(p, m);
  const auto est = deflate(analytic_inflated_log_density(m, 0, p, noise), noise);
  return ks_statistic(true_latent(p, grid), induced_latent(est, m, 0, grid)).ks;
}

Verdict oracle_deflate() {
  const double c = oracle_ks("s1", "vonmises", normal_gaussian(0.01, 1, 2));
  const double t = oracle_ks("t2", "t2_mixture3", normal_gaussian(0.01, 2, 3));
  const double s = oracle_ks("s2", "s2_mixture4", normal_gaussian(0.01, 2, 3));
  const double worst = std::max({c, t, s});
  return {worst < 1e-6, "KS circle " + num(c, 2) + ", torus " + num(t, 2) + ", sphere " + num(s, 2) + " (tol 1e-6)"};
}

// ---------------------------------------------------------------------------
// Variance bounds.
// ---------------------------------------------------------------------------

double circle_bound_formula(double u) {
  const double prop = std::abs(2 * 9.0 / (8.0 * (8.0 * std::sin(u) * std::sin(u) - std::cos(u))));
  return std::min(prop, 9.0);
}

Verdict sigma_bounds() {
  const auto m = zoo::circle();
  const auto p = make_density("vonmises", {{"kappa", 8.0}});
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double u = -kPi / 2 + kPi * (i + 0.5) / 1000;
    const double have = std::min(sigma2_prop(m, 0, p, v1(u)), sigma2_gauss(m, 0, v1(u)));
    worst = std::max(worst, std::abs(have - circle_bound_formula(u)) / circle_bound_formula(u));
  }
  const int n = 2'000'001;
  const double h = kPi / (n - 1);
  std::vector<double> w(n), y(n);
  for (int i = 0; i < n; ++i) w[static_cast<std::size_t>(i)] = std::exp(8.0 * std::cos(-kPi / 2 + i * h));
  const double z = oracle::trapezoid(w, h);
  for (int i = 0; i < n; ++i)
    y[static_cast<std::size_t>(i)] = circle_bound_formula(-kPi / 2 + i * h) * w[static_cast<std::size_t>(i)] / z;
  const double quad = oracle::trapezoid(y, h);
  const auto mc = sigma_upper_bound(m, 0, p, 4'000'000, 5);
  const double rel = std::abs(mc.value / quad - 1.0);
  return {worst <= 1e-10 && rel <= 1e-3, "pointwise max rel err " + num(worst, 2) + " (tol 1e-10); average " +
                                             num(mc.value, 6) + " vs quadrature " + num(quad, 6) + " rel " +
                                             num(rel, 2) + " (tol 1e-3, n=4e6, SE " + num(mc.std_error, 2) + ")"};
}

// ---------------------------------------------------------------------------
// Flow correctness.
// ---------------------------------------------------------------------------

FlowModel random_flow(int D, int hidden, int layers, double gate, std::uint64_t seed) {
  FlowArchitecture a;
  a.D = D;
  a.hidden_dim = hidden;
  a.n_hidden_layers = layers;
  a.init_gate = gate;
  return FlowModel(a, seed);
}

Verdict flow_correctness() {
  double worst_grad = 0.0;
  for (int D : {1, 2, 3}) {
    auto f = random_flow(D, 4 * D, 2, 0.4, 31 + D);
    Rng rng(D);
    std::normal_distribution<double> g(0.0, 1.5);
    Mat X(12, D);
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = g(rng);
    Vec grad;
    f.nll(X, &grad);
    const Vec theta = f.flat_parameters();
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      Vec pp = theta, pm = theta;
      pp[i] += 1e-5;
      pm[i] -= 1e-5;
      f.set_flat_parameters(pp);
      const double lp = f.nll(X);
      f.set_flat_parameters(pm);
      const double lm = f.nll(X);
      const double fd = (lp - lm) / 2e-5;
      worst_grad = std::max(worst_grad, std::abs(fd - grad[i]) / std::max(1.0, std::abs(fd)));
    }
    f.set_flat_parameters(theta);
  }
  double worst_det = 0.0;
  for (int D : {1, 2, 3, 4}) {
    const auto f = random_flow(D, 4 * D, 2, 0.6, 41 + D);
    Rng rng(100 + D);
    std::normal_distribution<double> g(0.0, 1.5);
    for (int t = 0; t < 20; ++t) {
      Vec x(D);
      for (int i = 0; i < D; ++i) x[i] = g(rng);
      Mat J(D, D);
      for (int j = 0; j < D; ++j) {
        Vec p = x, m = x;
        p[j] += 1e-6;
        m[j] -= 1e-6;
        J.col(j) = (f.transform(Mat(p.transpose())) - f.transform(Mat(m.transpose()))).transpose() / 2e-6;
      }
      ad::Graph gr;
      const auto fw = f.build(gr, Mat(x.transpose()), false);
      worst_det = std::max(worst_det, std::abs(gr.value(fw.logdet)(0, 0) - std::log(std::abs(J.determinant()))));
    }
  }
  double worst_mass = 0.0;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto f = random_flow(2, 16, 2, 0.5, 50 + seed);
    const int n = 801;
    const double L = 20.0, h = 2 * L / (n - 1);
    Mat grid(n * n, 2);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) grid.row(i * n + j) << -L + i * h, -L + j * h;
    const Vec lp = f.log_density(grid);
    double s = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        s += (i == 0 || i == n - 1 ? 0.5 : 1.0) * (j == 0 || j == n - 1 ? 0.5 : 1.0) * std::exp(lp[i * n + j]);
    worst_mass = std::max(worst_mass, std::abs(s * h * h - 1.0));
  }
  return {worst_grad <= 1e-4 && worst_det <= 1e-3 && worst_mass <= 1e-2,
          "gradient rel err " + num(worst_grad, 2) + " (tol 1e-4); log-det err " + num(worst_det, 2) +
              " (tol 1e-3); grid mass |1 - m| " + num(worst_mass, 2) + " (tol 1e-2)"};
}

// ---------------------------------------------------------------------------
// Trained pipelines.
// ---------------------------------------------------------------------------

ExperimentConfig circle_config(const std::string& manifold, const std::string& preset) {
  return ExperimentConfig::from_json({{"schema_version", 1},
                                      {"name", "acceptance"},
                                      {"manifold", manifold},
                                      {"density", {{"name", "vonmises"}, {"params", {{"kappa", 8.0}}}}},
                                      {"n_train", 100000},
                                      {"preset", preset}});
}

double cell_ks(const Experiment& e, const std::string& method, double sigma2, std::uint64_t seed,
               const std::filesystem::path& out) {
  const auto row = run_sweep_cell(e, method, sigma2, seed, BoundsResult{}, out);
  std::cout << "  " << e.cfg.manifold << " " << method << " sigma2=" << sigma2 << " seed=" << seed
            << " ks=" << num(row.ks) << " nll=" << num(row.best_val_nll) << " " << num(row.wall_time_s, 3) << "s "
            << row.status << std::endl;
  return row.status == "ok" ? row.ks : kInf;
}

Verdict e2e_circle() {
  const Experiment e(circle_config("s1", "desk"));
  const auto out = g_artifacts / "e2e_circle";
  const double a = cell_ks(e, "nid", 0.01, 0, out);
  const double b = cell_ks(e, "nid", 1.0, 0, out);
  const double c = cell_ks(e, "iid", 1.0, 0, out);
  return {a <= 0.1 && b <= 0.15 && c > b, "KS NID(0.01) " + num(a) + " (tol 0.1); NID(1) " + num(b) +
                                              " (tol 0.15); IID(1) " + num(c) + " must exceed NID(1)"};
}

Verdict higher_d() {
  const std::vector<double> grid = {1e-3, 1e-2, 1e-1, 1.0};
  const std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::map<int, double> gap;
  std::string detail;
  for (int D : {2, 20}) {
    const Experiment e(circle_config("s1:D=" + std::to_string(D), "highd"));
    const auto out = g_artifacts / ("higher_d_" + std::to_string(D));
    std::map<std::string, double> best;
    for (const std::string method : {"nid", "iid"}) {
      best[method] = kInf;
      for (double s2 : grid) {
        double sum = 0;
        for (auto seed : seeds) sum += cell_ks(e, method, s2, seed, out);
        best[method] = std::min(best[method], sum / static_cast<double>(seeds.size()));
      }
    }
    gap[D] = std::abs(best["nid"] - best["iid"]);
    detail += "D=" + std::to_string(D) + " opt KS NID " + num(best["nid"]) + " IID " + num(best["iid"]) + " gap " +
              num(gap[D]) + "; ";
  }
  return {gap[20] < gap[2], detail + "gap must shrink from D=2 to D=20"};
}

Verdict reachability() {
  const auto m = zoo::circle();
  const auto p = make_density("uniform", {{"lo", -kPi}, {"hi", kPi}});
  const auto in = reachability_check(m, normal_uniform_interval(-1.0, 1.0, 1, 2), p, 1000, 64, 1);
  const auto over = reachability_check(m, normal_uniform_interval(-4.5, 1.0, 1, 2), p, 1000, 64, 1);
  return {in.violation_fraction <= 1e-3 && over.violation_fraction >= 0.05,
          "inside [-1, 1): " + num(in.violation_fraction) + " (tol <= 1e-3); overlapping [-4.5, 1): " +
              num(over.violation_fraction) + " (tol >= 0.05); 1000 probes, radius 3"};
}

Verdict fom() {
  const auto p = make_density("vonmises", {{"kappa", 8.0}});
  const auto m = zoo::circle();
  const auto grid = default_grid(p, m);
  const Samples u = p.sample(100000, latent_stream_seed(0));
  const auto preset = flow_preset("desk", 1, 1);
  const auto r = fom_baseline(u, p, grid, FomMethod::Auto, preset.arch, preset.train, 0);
  const double ks = ks_statistic(true_latent(p, grid), r.density).ks;
  return {ks <= 0.05, r.method + " baseline KS " + num(ks) + " (tol 0.05, n=1e5)"};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<std::string> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--artifacts" && i + 1 < argc)
      g_artifacts = argv[++i];
    else
      only.insert(a);
  }
  const std::vector<Criterion> all = {
      {"geometry", geometry},         {"lemma", lemma},
      {"error_law", error_law},       {"oracle_deflate", oracle_deflate},
      {"sigma_bounds", sigma_bounds}, {"flow_correctness", flow_correctness},
      {"e2e_circle", e2e_circle},     {"higher_d", higher_d},
      {"reachability", reachability}, {"fom", fom},
  };
  int n_pass = 0, n_run = 0;
  std::vector<std::string> unexpected, known;
  std::vector<std::string> lines;
  for (const auto& c : all) {
    if (!only.empty() && !only.count(c.name)) continue;
    ++n_run;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const std::string line =
        std::string(v.pass ? "PASS" : "FAIL") + " " + c.name + ": " + v.detail + " [" + num(dt, 3) + " s]";
    std::cout << line << std::endl;
    lines.push_back(line);
    if (v.pass)
      ++n_pass;
    else
      (kKnownRed.count(c.name) ? known : unexpected).push_back(c.name);
  }
  std::cout << "\n";
  for (const auto& l : lines) std::cout << l << "\n";
  std::cout << n_pass << "/" << n_run << " criteria PASS";
  if (!known.empty()) {
    std::cout << "; known FAIL:";
    for (const auto& k : known) std::cout << " " << k;
  }
  if (!unexpected.empty()) {
    std::cout << "; unexpected FAIL:";
    for (const auto& k : unexpected) std::cout << " " << k;
  }
  std::cout << std::endl;
  return unexpected.empty() ? 0 : 1;
}
