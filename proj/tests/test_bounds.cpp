#include <gtest/gtest.h>

#include "infdef/bounds.hpp"
#include "oracles.hpp"

using namespace infdef;

namespace {

/// Pointwise upper bound on the circle of radius r under a von Mises(kappa) density.
double circle_formula(double u, double r, double kappa) {
  return std::min(std::abs(2 * r * r / (kappa * (kappa * std::sin(u) * std::sin(u) - std::cos(u)))), r * r);
}

/// Straight segment in the plane: zero curvature.
ManifoldSpec flat_segment() {
  ChartSpec c;
  c.domain = {{0.0}, {1.0}};
  c.grid_domain = c.domain;
  c.map = [](const Vec& u) { return Vec{{u[0], 0.0}}; };
  return {"segment", 1, 2, {c}, {}};
}

double brute_nn_squared(const Samples& X) {
  double s = 0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    double best = kInf;
    for (Eigen::Index j = 0; j < X.rows(); ++j)
      if (j != i) best = std::min(best, (X.row(i) - X.row(j)).squaredNorm());
    s += best;
  }
  return s / static_cast<double>(X.rows());
}

}  // namespace

TEST(SigmaUpper, CirclePointwiseFormula) {
  const auto m = zoo::circle();
  const auto p = make_density("vonmises", {{"kappa", 8.0}});
  for (double u : {-1.4, -0.8, -0.2, 0.0, 0.1, 0.5, 1.1, 1.5}) {
    const Vec uv = Vec::Constant(1, u);
    const double prop = std::abs(2 * 9.0 / (8.0 * (8.0 * std::sin(u) * std::sin(u) - std::cos(u))));
    EXPECT_NEAR(sigma2_prop(m, 0, p, uv) / prop, 1.0, 1e-10) << u;
    EXPECT_NEAR(sigma2_gauss(m, 0, uv), 9.0, 1e-6);
    EXPECT_NEAR(std::min(sigma2_prop(m, 0, p, uv), sigma2_gauss(m, 0, uv)), circle_formula(u, 3, 8), 1e-6);
  }
  EXPECT_NEAR(sigma2_prop(m, 0, p, Vec::Zero(1)), 2.25, 1e-12);
}

TEST(SigmaUpper, CircleAverageMatchesQuadrature) {
  const auto m = zoo::circle();
  const auto p = make_density("vonmises", {{"kappa", 8.0}});
  const int n = 200001;
  std::vector<double> y(n);
  const double h = kPi / (n - 1);
  double z = 0;
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) w[static_cast<std::size_t>(i)] = std::exp(8.0 * std::cos(-kPi / 2 + i * h));
  z = oracle::trapezoid(w, h);
  for (int i = 0; i < n; ++i) {
    const double u = -kPi / 2 + i * h;
    y[static_cast<std::size_t>(i)] = circle_formula(u, 3, 8) * w[static_cast<std::size_t>(i)] / z;
  }
  const double quad = oracle::trapezoid(y, h);
  const auto r = sigma_upper_bound(m, 0, p, 10000, 1);
  EXPECT_LE(std::abs(r.value - quad), 4 * r.std_error);
  EXPECT_NEAR(r.value / quad, 1.0, 0.02);
}

TEST(SigmaUpper, UniformCircleIsCurvatureBound) {
  const auto m = zoo::circle();
  const auto p = make_density("uniform", {{"lo", -kPi}, {"hi", kPi}});
  EXPECT_EQ(sigma2_prop(m, 0, p, Vec::Constant(1, 0.4)), kInf);
  EXPECT_NEAR(sigma_upper_bound(m, 0, p, 500, 2).value, 9.0, 1e-6);
}

TEST(SigmaUpper, FlatUniformIsInfinite) {
  const auto p = make_density("uniform", {{"lo", 0.0}, {"hi", 1.0}});
  EXPECT_EQ(sigma_upper_bound(flat_segment(), 0, p, 100, 1).value, kInf);
}

TEST(Curvature, SphereAndTorus) {
  const auto s = zoo::sphere();
  for (const Vec& u : oracle::interior_points(s, 0, 50, 3)) EXPECT_NEAR(sigma2_gauss(s, 0, u), 1.0, 1e-6);
  const auto t = zoo::torus();
  for (const Vec& u : oracle::interior_points(t, 0, 50, 4)) {
    auto k = principal_curvatures(t, 0, u);
    for (auto& v : k) v = std::abs(v);
    std::sort(k.begin(), k.end());
    // tube curvature 1/r and parallel curvature cos(phi) / (R + r cos(phi)), R = 1, r = 0.6
    std::vector<double> ref = {1 / 0.6, std::abs(std::cos(u[1]) / (1 + 0.6 * std::cos(u[1])))};
    std::sort(ref.begin(), ref.end());
    EXPECT_NEAR(k[0], ref[0], 1e-5);
    EXPECT_NEAR(k[1], ref[1], 1e-5);
    EXPECT_NEAR(sigma2_gauss(t, 0, u), 1 / (ref[1] * ref[1]), 1e-6);
  }
  // (cos u, sin u, -sin u, cos u) is a circle of radius sqrt(2)
  EXPECT_NEAR(principal_curvatures(make_manifold("so2"), 0, Vec::Constant(1, 0.3))[0], 1 / std::sqrt(2.0), 1e-8);
}

TEST(Curvature, CurveFormula) {
  // Archimedean spiral r = s in arc parameter s: curvature (2 + s^2) / (1 + s^2)^1.5
  const auto m = zoo::thin_spiral();
  for (double z : {0.1, 0.5, 1.0, 2.0}) {
    const double s = 3 * kPi * std::sqrt(z);
    const double k = (2 + s * s) / std::pow(1 + s * s, 1.5);
    EXPECT_NEAR(principal_curvatures(m, 0, Vec::Constant(1, z))[0] / k, 1.0, 1e-6);
  }
}

TEST(SigmaLower, SymmetricPairAndDuplicates) {
  Samples two(2, 2);
  two << 0, 0, 1, 0;
  EXPECT_DOUBLE_EQ(sigma_lower_bound(two).squared, 1.0);
  EXPECT_DOUBLE_EQ(sigma_lower_bound(two).raw, 1.0);
  Samples dup(4, 3);
  dup << 1, 2, 3, 1, 2, 3, 5, 5, 5, 5, 5, 5;
  EXPECT_EQ(sigma_lower_bound(dup).squared, 0.0);
  EXPECT_THROW(sigma_lower_bound(Samples(1, 2)), ParamError);
}

TEST(SigmaLower, KdTreeMatchesBruteForce) {
  const auto m = zoo::circle();
  const auto p = make_density("uniform", {{"lo", -kPi}, {"hi", kPi}});
  const Samples u = p.sample(500, 3);
  Samples X(500, 2);
  for (Eigen::Index i = 0; i < 500; ++i) X.row(i) = embed(m, 0, u.row(i).transpose()).transpose();
  EXPECT_EQ(sigma_lower_bound(X).squared, brute_nn_squared(X));

  std::mt19937_64 rng(9);
  std::normal_distribution<double> g;
  Samples Y(400, 10);
  for (Eigen::Index i = 0; i < Y.size(); ++i) Y.data()[i] = g(rng);
  EXPECT_EQ(sigma_lower_bound(Y).squared, brute_nn_squared(Y));
}

TEST(SigmaLower, UniformCircleSpacing) {
  const auto m = zoo::circle();
  const auto p = make_density("uniform", {{"lo", -kPi}, {"hi", kPi}});
  const std::size_t n = 10000;
  const Samples u = p.sample(n, 4);
  Samples X(static_cast<Eigen::Index>(n), 2);
  for (Eigen::Index i = 0; i < X.rows(); ++i) X.row(i) = embed(m, 0, u.row(i).transpose()).transpose();
  // uniform spacings are Exp with mean L/n; nearest of two neighbours has mean L/(2n), second moment L^2/(2n^2)
  const double L = 2 * kPi * 3;
  const auto r = sigma_lower_bound(X);
  EXPECT_NEAR(r.raw / (L / (2.0 * n)), 1.0, 0.05);
  EXPECT_NEAR(r.squared / (L * L / (2.0 * n * n)), 1.0, 0.1);
}
