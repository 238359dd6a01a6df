#include <gtest/gtest.h>

#include "infdef/inflation.hpp"
#include "oracles.hpp"

using namespace infdef;

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }

}  // namespace

TEST(NoiseModel, ValidatesParameters) {
  EXPECT_THROW(normal_gaussian(0.0, 1, 2), ParamError);
  EXPECT_THROW(isotropic_gaussian(-1.0, 1, 2), ParamError);
  EXPECT_THROW(normal_gaussian(1.0, 2, 2), ParamError);
  EXPECT_THROW(normal_chi_squared(0, 1, 2), ParamError);
  EXPECT_THROW(normal_chi_squared(3, 1, 3), ParamError);
  EXPECT_THROW(normal_uniform_ball(0.0, 1, 2), ParamError);
  EXPECT_THROW(normal_uniform_interval(0.5, 1.0, 1, 2), ParamError);
  EXPECT_THROW(normal_uniform_interval(-1.0, 1.0, 2, 4), ParamError);
}

TEST(DeflationConstant, GaussianUnitVariance) {
  EXPECT_NEAR(deflation_constant(normal_gaussian(1.0, 1, 2)), 0.3989422804014327, 1e-15);
  EXPECT_NEAR(deflation_constant(isotropic_gaussian(1.0, 1, 2)), 0.3989422804014327, 1e-15);
}

TEST(DeflationConstant, GaussianMatchesPdfAtOrigin) {
  for (int D : {2, 3, 5, 10, 20}) {
    for (double s2 : {1e-6, 0.01, 1.0, 7.5}) {
      const int m = D - 1;
      // product of m one-dimensional N(0, s2) densities at zero
      double direct = 1.0;
      for (int i = 0; i < m; ++i) direct *= 1.0 / std::sqrt(2 * kPi * s2);
      const double c = deflation_constant(normal_gaussian(s2, 1, D));
      EXPECT_NEAR(c / direct, 1.0, 1e-12);
    }
  }
}

TEST(DeflationConstant, ChiSquaredThree) {
  const double expected = std::sqrt(3.0) * std::exp(-1.5) / (std::sqrt(8.0) * std::tgamma(1.5));
  EXPECT_NEAR(deflation_constant(normal_chi_squared(3, 1, 2)), expected, 1e-15);
  EXPECT_NEAR(deflation_constant(normal_chi_squared(3, 1, 2)), oracle::chi2_pdf(3.0, 3), 1e-15);
  for (int k : {1, 2, 4, 7}) EXPECT_NEAR(deflation_constant(normal_chi_squared(k, 1, 2)), oracle::chi2_pdf(k, k), 1e-14);
}

TEST(DeflationConstant, UniformBall) {
  EXPECT_DOUBLE_EQ(deflation_constant(normal_uniform_ball(2.0, 1, 2)), 0.25);
  EXPECT_NEAR(deflation_constant(normal_uniform_ball(1.0, 1, 3)), 1.0 / kPi, 1e-15);
  EXPECT_NEAR(deflation_constant(normal_uniform_ball(2.0, 1, 4)), 3.0 / (4.0 * kPi * 8.0), 1e-15);
  EXPECT_DOUBLE_EQ(deflation_constant(normal_uniform_interval(-1.5, 1.0, 1, 2)), 0.4);
}

TEST(Inflate, ZeroNoiseLimit) {
  const auto m = zoo::circle();
  const auto p = inflate(normal_gaussian(1e-18, 1, 2), m, 0, v1(0.4), 3);
  EXPECT_LE((p.x_tilde - p.x).norm(), 1e-8);
}

TEST(Inflate, CircleDisplacementIsRadial) {
  const auto m = zoo::circle();
  for (std::uint64_t s = 0; s < 50; ++s) {
    const double u = -3.0 + 0.12 * static_cast<double>(s);
    const auto p = inflate(normal_gaussian(0.5, 1, 2), m, 0, v1(u), s);
    const Vec dx = p.x_tilde - p.x;
    const double cross = p.x[0] * dx[1] - p.x[1] * dx[0];
    EXPECT_LE(std::abs(cross), 1e-10 * p.x.norm() * dx.norm());
  }
}

TEST(Inflate, ChiSquaredSupport) {
  const auto m = zoo::circle(1.0);
  const auto noise = normal_chi_squared(1, 1, 2);
  for (std::uint64_t s = 0; s < 2000; ++s) {
    const auto p = inflate(noise, m, 0, v1(0.3), s);
    EXPECT_GE(p.v[0], -1.0);
    // v multiplies the outward radial direction
    EXPECT_NEAR(p.x_tilde.norm(), std::abs(1.0 + p.v[0]), 1e-12);
  }
}

TEST(Inflate, NormalKindsAreOrthogonalToTangent) {
  for (const auto& name : manifold_names()) {
    const auto m = make_manifold(name);
    const auto noise = normal_gaussian(0.3, m.d, m.D);
    for (std::size_t ci = 0; ci < m.charts.size(); ++ci) {
      std::uint64_t s = 0;
      for (const Vec& u : oracle::interior_points(m, ci, 30, 17)) {
        const auto p = inflate(noise, m, ci, u, ++s);
        const Vec dx = p.x_tilde - p.x;
        const Vec t = jacobian(m, ci, u).transpose() * dx;
        EXPECT_LE(t.cwiseAbs().maxCoeff(), 1e-8 * dx.norm() * std::max(1.0, jacobian(m, ci, u).norm())) << name;
      }
    }
  }
}

TEST(Inflate, IsotropicUsesFullDimension) {
  const auto m = zoo::circle();
  const auto p = inflate(isotropic_gaussian(1.0, 1, 2), m, 0, v1(0.0), 1);
  EXPECT_EQ(p.v.size(), 2);
  EXPECT_LT((p.x_tilde - p.x - p.v).norm(), 1e-15);
}

TEST(Inflate, DeterministicAndBatchSeeding) {
  const auto m = zoo::sphere();
  const auto noise = normal_gaussian(0.1, 2, 3);
  Samples u(3, 2);
  u << 1.0, 1.0, 2.0, 0.5, 3.0, 2.5;
  const Samples a = inflate_batch(noise, m, u, 100);
  for (int i = 0; i < 3; ++i) {
    const auto p = inflate(noise, m, 0, u.row(i).transpose(), 100 + i);
    EXPECT_EQ((a.row(i).transpose() - p.x_tilde).norm(), 0.0);
  }
  EXPECT_EQ((inflate_batch(noise, m, u, 100) - a).norm(), 0.0);
}

TEST(Inflate, UniformBallStaysInside) {
  const auto m = make_manifold("s1:D=4");
  const auto noise = normal_uniform_ball(0.5, 1, 4);
  for (std::uint64_t s = 0; s < 500; ++s) {
    const auto p = inflate(noise, m, 0, v1(1.0), s);
    EXPECT_LT(p.v.norm(), 0.5);
    EXPECT_TRUE(noise.in_support(p.v));
  }
}

TEST(ErrorLaw, ClosedForm) {
  EXPECT_DOUBLE_EQ(gaussian_vs_normal_error(1, 5), 0.5);
  EXPECT_DOUBLE_EQ(gaussian_vs_normal_error(1, 20), 1.0 / 17.0);
  EXPECT_THROW(gaussian_vs_normal_error(2, 4), FormulaDomainError);
  EXPECT_THROW(gaussian_vs_normal_error(1, 3), FormulaDomainError);
}

TEST(ErrorLaw, MonteCarloConverges) {
  const auto a = gaussian_vs_normal_error_mc(make_manifold("s1:D=10"), 0, v1(0.3), 1.0, 1'000'000, 1);
  EXPECT_NEAR(a.mean, 1.0 / 7.0, 0.02 / 7.0);
  EXPECT_LE(std::abs(a.mean - 1.0 / 7.0), 3 * a.std_error);
  const auto b = gaussian_vs_normal_error_mc(make_manifold("s1:D=20"), 0, v1(-1.0), 0.2, 1'000'000, 2);
  EXPECT_NEAR(b.mean, 1.0 / 17.0, 0.03 / 17.0);
  EXPECT_THROW(gaussian_vs_normal_error_mc(zoo::sphere(), 0, Vec{{1.0, 1.0}}, 1.0, 10, 1), FormulaDomainError);
}

TEST(ErrorLaw, DecompositionReassembles) {
  const auto m = make_manifold("s1:D=6");
  const auto frame = normal_frame(m, 0, v1(0.8));
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  for (int t = 0; t < 20; ++t) {
    Vec eps(6);
    for (int i = 0; i < 6; ++i) eps[i] = g(rng);
    const Vec en = frame.columns * (frame.columns.transpose() * eps);
    const Vec et = eps - en;
    EXPECT_LT((et + en - eps).norm(), 1e-10);
    EXPECT_LT(std::abs(et.dot(en)), 1e-10);
  }
}

TEST(Generators, CircleInsideAndOutside) {
  const auto m = zoo::circle();
  // Gaussian support is the whole normal line: both the near and far foot points generate.
  auto g = generators(m, normal_gaussian(1.0, 1, 2), Vec{{1.0, 0.0}}, 128);
  EXPECT_EQ(g.size(), 2u);
  // interval [-1, 1) reaches only from the near side
  g = generators(m, normal_uniform_interval(-1.0, 1.0, 1, 2), Vec{{2.5, 0.0}}, 128);
  ASSERT_EQ(g.size(), 1u);
  EXPECT_NEAR(g[0].u[0], 0.0, 1e-10);
  EXPECT_NEAR(g[0].v[0], -0.5, 1e-10);
  // [-4.5, 1) reaches past the centre: the opposite point also generates
  g = generators(m, normal_uniform_interval(-4.5, 1.0, 1, 2), Vec{{1.0, 0.0}}, 128);
  EXPECT_EQ(g.size(), 2u);
}

TEST(Reachability, IntervalInsideRadiusIsReachable) {
  const auto m = zoo::circle();
  const auto p = make_density("vonmises_mixture", {{"kappa", 1.0}, {"mus", {0.0}}});
  const auto rep = reachability_check(m, normal_uniform_interval(-1.0, 1.0, 1, 2), p, 500, 64, 3);
  EXPECT_LE(rep.violation_fraction, 1e-3);
}

TEST(Reachability, OverlappingIntervalViolates) {
  const auto m = zoo::circle();
  const auto p = make_density("uniform", {{"lo", -kPi}, {"hi", kPi}});
  const auto rep = reachability_check(m, normal_uniform_interval(-4.5, 1.0, 1, 2), p, 2000, 64, 3);
  // The antipodal foot point reaches x_tilde with w = -6 - v, inside [-4.5, 1) iff v <= -1.5.
  EXPECT_NEAR(rep.violation_fraction, 3.0 / 5.5, 0.035);
  EXPECT_FALSE(rep.examples.empty());
}

TEST(Reachability, BallBelowReachOnSphere) {
  const auto m = zoo::sphere();
  const auto p = make_density("s2_mixture4");
  const auto rep = reachability_check(m, normal_uniform_ball(0.9, 2, 3), p, 100, 48, 5);
  EXPECT_EQ(rep.violation_fraction, 0.0);
}

TEST(Reachability, Preconditions) {
  const auto m = zoo::circle();
  const auto p = make_density("uniform", {{"lo", -kPi}, {"hi", kPi}});
  EXPECT_THROW(reachability_check(m, normal_uniform_ball(1.0, 1, 2), p, 50, 64, 1), ParamError);
  EXPECT_THROW(reachability_check(m, isotropic_gaussian(1.0, 1, 2), p, 100, 64, 1), ParamError);
}
