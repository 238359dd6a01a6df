#include <gtest/gtest.h>

#include <filesystem>

#include "infdef/inflation.hpp"
#include "infdef/train.hpp"

using namespace infdef;

namespace {

FlowModel random_flow(int D, int hidden, int layers, double gate, std::uint64_t seed) {
  FlowArchitecture a;
  a.D = D;
  a.hidden_dim = hidden;
  a.n_hidden_layers = layers;
  a.init_gate = gate;
  return FlowModel(a, seed);
}

Mat gaussian_data(int n, const Vec& mean, double sd, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, sd);
  Mat X(n, mean.size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < mean.size(); ++j) X(i, j) = mean[j] + g(rng);
  return X;
}

/// Central-difference Jacobian of the forward map at x.
Mat fd_flow_jacobian(const FlowModel& f, const Vec& x) {
  const int D = f.dim();
  Mat J(D, D);
  for (int j = 0; j < D; ++j) {
    Vec p = x, m = x;
    const double h = 1e-6;
    p[j] += h;
    m[j] -= h;
    J.col(j) = (f.transform(Mat(p.transpose())) - f.transform(Mat(m.transpose()))).transpose() / (2 * h);
  }
  return J;
}

}  // namespace

TEST(FlowAnchors, IdentityAtOrigin) {
  for (int D : {1, 2, 3, 5}) {
    const auto f = identity_flow(D);
    EXPECT_NEAR(f.log_density(Vec(Vec::Zero(D))), -0.5 * D * std::log(2 * kPi), 1e-14);
  }
}

TEST(FlowAnchors, IdentityAtUnitVector) {
  const auto f = identity_flow(2);
  EXPECT_NEAR(f.log_density(Vec{{1.0, 0.0}}), -std::log(2 * kPi) - 0.5, 1e-14);
}

TEST(FlowAnchors, ParameterCounts) {
  EXPECT_EQ(random_flow(2, 100, 3, 0.01, 0).bnaf_parameter_count(), 31204u);
  EXPECT_EQ(random_flow(5, 250, 3, 0.01, 0).bnaf_parameter_count(), 192010u);
  EXPECT_EQ(random_flow(15, 750, 3, 0.01, 0).bnaf_parameter_count(), 1716030u);
  EXPECT_EQ(random_flow(2, 210, 6, 0.01, 0).bnaf_parameter_count(), 268384u);
  EXPECT_EQ(random_flow(3, 210, 6, 0.01, 0).bnaf_parameter_count(), 268806u);
  EXPECT_EQ(random_flow(4, 200, 6, 0.01, 0).bnaf_parameter_count(), 244408u);
  EXPECT_EQ(random_flow(2, 100, 3, 0.01, 0).parameter_count(), 31205u);
}

TEST(FlowAnchors, ArchitectureValidation) {
  EXPECT_THROW(random_flow(3, 100, 3, 0.01, 0), ParamError);
  EXPECT_THROW(random_flow(2, 100, 3, 1.0, 0), ParamError);
  const auto f = random_flow(2, 8, 1, 0.01, 0);
  EXPECT_THROW(f.log_density(Mat(Mat::Zero(3, 3))), ParamError);
}

TEST(FlowGradient, NllMatchesFiniteDifferences) {
  auto f = random_flow(2, 8, 3, 0.3, 7);
  const Mat X = gaussian_data(16, Vec{{0.5, -0.3}}, 1.5, 1);
  Vec grad;
  f.nll(X, &grad);
  const Vec theta = f.flat_parameters();
  const double h = 1e-5;
  double worst = 0;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    Vec p = theta, m = theta;
    p[i] += h;
    m[i] -= h;
    f.set_flat_parameters(p);
    const double lp = f.nll(X);
    f.set_flat_parameters(m);
    const double lm = f.nll(X);
    const double fd = (lp - lm) / (2 * h);
    worst = std::max(worst, std::abs(fd - grad[i]) / std::max(1.0, std::abs(fd)));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(FlowJacobian, LogDetMatchesBruteForce) {
  for (int D : {1, 2, 3, 4}) {
    const auto f = random_flow(D, 4 * D, 2, 0.6, 11 + D);
    Rng rng(D);
    std::normal_distribution<double> g(0.0, 1.5);
    for (int t = 0; t < 10; ++t) {
      Vec x(D);
      for (int i = 0; i < D; ++i) x[i] = g(rng);
      ad::Graph gr;
      const auto fw = f.build(gr, Mat(x.transpose()), false);
      const double ld = gr.value(fw.logdet)(0, 0);
      const double brute = std::log(std::abs(fd_flow_jacobian(f, x).determinant()));
      EXPECT_NEAR(ld, brute, 1e-3) << "D = " << D;
    }
  }
}

TEST(FlowJacobian, AutoregressiveAndMonotone) {
  const auto f = random_flow(3, 12, 2, 0.8, 5);
  const Mat J = fd_flow_jacobian(f, Vec{{0.3, -1.0, 2.0}});
  for (int i = 0; i < 3; ++i) {
    EXPECT_GT(J(i, i), 0.0);
    for (int j = i + 1; j < 3; ++j) EXPECT_NEAR(J(i, j), 0.0, 1e-9);
  }
  Mat line(200, 3);
  for (int k = 0; k < 200; ++k) line.row(k) << 0.3, -1.0, -10.0 + 0.1 * k;
  const Mat z = f.transform(line);
  for (int k = 1; k < 200; ++k) EXPECT_GT(z(k, 2), z(k - 1, 2));
}

TEST(FlowNormalisation, IntegratesToOneOnGrid) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto f = random_flow(2, 16, 2, 0.5, seed);
    const int n = 801;
    const double L = 20.0, h = 2 * L / (n - 1);
    Mat grid(n * n, 2);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) grid.row(i * n + j) << -L + i * h, -L + j * h;
    const Vec lp = f.log_density(grid);
    double s = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double w = (i == 0 || i == n - 1 ? 0.5 : 1.0) * (j == 0 || j == n - 1 ? 0.5 : 1.0);
        s += w * std::exp(lp[i * n + j]);
      }
    EXPECT_NEAR(s * h * h, 1.0, 1e-2) << "seed " << seed;
  }
}

TEST(FlowLoss, IdenticalBatchEqualsSinglePoint) {
  const auto f = random_flow(2, 8, 2, 0.4, 3);
  const Vec x{{0.7, -0.2}};
  Mat X(5, 2);
  X.rowwise() = x.transpose();
  EXPECT_NEAR(f.nll(X), -f.log_density(x), 1e-12);
}

TEST(FlowLoss, NumericalErrorNamesLayer) {
  auto f = random_flow(2, 8, 2, 0.4, 3);
  Vec theta = f.flat_parameters();
  theta[0] = std::numeric_limits<double>::quiet_NaN();
  f.set_flat_parameters(theta);
  try {
    f.log_density(Vec{{0.0, 0.0}});
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_EQ(e.layer(), 0);
  }
}

TEST(FlowTraining, AdamReducesLossOnGaussianData) {
  const auto f = random_flow(2, 16, 2, 0.01, 1);
  const Mat X = gaussian_data(5000, Vec{{3.0, -2.0}}, 0.5, 2);
  const double before = f.nll(X);
  TrainConfig cfg;
  cfg.max_iterations = 500;
  cfg.seed = 1;
  const auto r = train(f, X, cfg);
  EXPECT_LE(r.flow.nll(X), before - 0.5);
}

TEST(FlowTraining, StandardNormalReachesEntropy) {
  const auto f = random_flow(2, 20, 2, 0.01, 4);
  const Mat X = gaussian_data(20000, Vec::Zero(2), 1.0, 3);
  TrainConfig cfg;
  cfg.max_iterations = 5000;
  cfg.seed = 2;
  const auto r = train(f, X, cfg);
  EXPECT_NEAR(r.best_val_nll, 1.0 + std::log(2 * kPi), 0.05);
}

TEST(FlowTraining, DeterministicTrace) {
  const auto f = random_flow(2, 8, 1, 0.01, 1);
  const Mat X = gaussian_data(1000, Vec{{1.0, 1.0}}, 0.7, 5);
  TrainConfig cfg;
  cfg.max_iterations = 300;
  cfg.validation_interval = 50;
  cfg.seed = 9;
  const auto a = train(f, X, cfg), b = train(f, X, cfg);
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    EXPECT_EQ(a.trace[i].train_nll, b.trace[i].train_nll);
    EXPECT_EQ(a.trace[i].val_nll, b.trace[i].val_nll);
  }
  EXPECT_EQ((a.flow.flat_parameters() - b.flow.flat_parameters()).norm(), 0.0);
}

TEST(FlowTraining, BestSoFarOnInflatedCircle) {
  const auto m = zoo::circle();
  const auto p = make_density("vonmises", {{"kappa", 8.0}});
  const Samples u = p.sample(4000, 1);
  const Mat X = inflate_batch(normal_gaussian(0.01, 1, 2), m, u, 2);
  TrainConfig cfg;
  cfg.max_iterations = 600;
  cfg.validation_interval = 50;
  cfg.seed = 3;
  const auto r = train(random_flow(2, 20, 2, 0.01, 1), X, cfg);
  double best = kInf;
  for (const auto& row : r.trace) best = std::min(best, row.val_nll);
  EXPECT_LE(r.best_val_nll, best);
  EXPECT_NEAR(-r.flow.log_density(X).mean() * 0 + r.best_val_nll, best, 1e-12);
}

TEST(FlowTraining, DivergenceAfterPersistentNonFiniteLoss) {
  auto f = random_flow(2, 8, 1, 0.01, 1);
  Vec theta = f.flat_parameters();
  theta[3] = std::numeric_limits<double>::quiet_NaN();
  f.set_flat_parameters(theta);
  TrainConfig cfg;
  cfg.max_iterations = 100;
  EXPECT_THROW(train(f, gaussian_data(1000, Vec::Zero(2), 1.0, 1), cfg), DivergenceError);
}

TEST(FlowTraining, ConfigValidation) {
  TrainConfig cfg;
  cfg.lr_decay = 1.0;
  EXPECT_THROW(cfg.validate(), ParamError);
  cfg = {};
  cfg.batch_size = 2000;
  EXPECT_THROW(train(random_flow(2, 8, 1, 0.01, 1), gaussian_data(1000, Vec::Zero(2), 1.0, 1), cfg), ParamError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto f = random_flow(3, 12, 2, 0.2, 8);
  const auto path = (std::filesystem::temp_directory_path() / "infdef_ckpt_test.bin").string();
  save_checkpoint(path, f, {{"seed", 8}, {"iteration", 10}, {"val_nll", 1.5}});
  const auto c = load_checkpoint(path);
  EXPECT_EQ((c.flow.flat_parameters() - f.flat_parameters()).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(c.header["seed"].get<int>(), 8);
  EXPECT_EQ(c.header["architecture"]["hidden_dim"].get<int>(), 12);
  std::filesystem::remove(path);
}

TEST(Presets, DeskAndPaper) {
  const auto d = flow_preset("desk", 2, 1);
  EXPECT_EQ(d.arch.hidden_dim, 100);
  EXPECT_EQ(d.train.max_iterations, 20000u);
  EXPECT_EQ(flow_preset("paper", 2, 1).train.max_iterations, 70000u);
  EXPECT_EQ(flow_preset("paper", 20, 1).train.max_iterations, 100000u);
  EXPECT_EQ(flow_preset("paper", 4, 2).arch.hidden_dim, 200);
  EXPECT_EQ(flow_preset("paper", 3, 2).arch.n_hidden_layers, 6);
  EXPECT_THROW(flow_preset("huge", 2, 1), ConfigError);
}
