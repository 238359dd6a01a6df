#ifndef INFDEF_FLOW_HPP_
#define INFDEF_FLOW_HPP_

// Block neural autoregressive flow (data -> latent) with a standard-normal
// reference density, built on the tape in autodiff.hpp.
//
// Layer l maps D*a_l features to D*b_l features with a block-lower-triangular
// weight whose diagonal blocks are exp(raw) and whose rows are rescaled to norm
// exp(s_l). tanh sits between layers. The diagonal Jacobian blocks are carried
// per sample in linear space, renormalised by their block maximum after every
// step, with the log of the removed scale kept on the side. The output is
// gated with the input: z = (1 - g) x + g F(x), g = sigmoid(gate).

#include <cmath>
#include <string>
#include <vector>

#include "infdef/autodiff.hpp"
#include "infdef/io.hpp"

namespace infdef {

struct FlowArchitecture {
  int D = 2;
  int hidden_dim = 100;
  /// Number of hidden-to-hidden layers.
  int n_hidden_layers = 3;
  /// Initial gate value g; 0 gives the exact identity map. Small gates stall
  /// training on thin inflated data (the gate gradient scales with g(1 - g)).
  double init_gate = 0.5;

  int block() const { return hidden_dim / D; }

  void validate() const {
    if (D < 1) throw ParamError("flow dimension must be >= 1");
    if (hidden_dim < D || hidden_dim % D != 0)
      throw ParamError("hidden_dim must be a positive multiple of D (got " + std::to_string(hidden_dim) +
                       " for D = " + std::to_string(D) + ")");
    if (n_hidden_layers < 0) throw ParamError("n_hidden_layers must be >= 0");
    if (!(init_gate >= 0.0 && init_gate < 1.0)) throw ParamError("init_gate must lie in [0, 1)");
  }

  json to_json() const {
    return {{"D", D}, {"hidden_dim", hidden_dim}, {"n_hidden_layers", n_hidden_layers}, {"init_gate", init_gate}};
  }

  static FlowArchitecture from_json(const json& j) {
    FlowArchitecture a;
    a.D = j.at("D").get<int>();
    a.hidden_dim = j.at("hidden_dim").get<int>();
    a.n_hidden_layers = j.at("n_hidden_layers").get<int>();
    a.init_gate = j.value("init_gate", 0.5);
    a.validate();
    return a;
  }
};

class FlowModel {
 public:
  struct Layer {
    int in_block = 1;   // a
    int out_block = 1;  // b
    Mat diag_mask;
    Mat lower_mask;
  };

  /// Random initialisation: Xavier-uniform blocks, log-uniform row scales,
  /// uniform biases, gate = init_gate.
  FlowModel(const FlowArchitecture& arch, std::uint64_t seed) : arch_(arch) {
    arch_.validate();
    build_layers();
    Rng rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& L = layers_[l];
      const int D = arch_.D, a = L.in_block, b = L.out_block;
      Mat W = Mat::Zero(D * b, D * a);
      for (int i = 0; i < D; ++i) {
        const double bound = std::sqrt(6.0 / ((i + 1) * a + b));
        for (int r = 0; r < b; ++r)
          for (int c = 0; c < (i + 1) * a; ++c) W(i * b + r, c) = bound * (2 * unit(rng) - 1);
      }
      Mat s(D * b, 1);
      for (Eigen::Index r = 0; r < s.rows(); ++r) s(r, 0) = std::log(std::max(unit(rng), 1e-12));
      const double bb = 1.0 / std::sqrt(static_cast<double>(D * b));
      Mat bias(1, D * b);
      for (Eigen::Index c = 0; c < bias.cols(); ++c) bias(0, c) = bb * (2 * unit(rng) - 1);
      params_.push_back(std::move(W));
      params_.push_back(std::move(s));
      params_.push_back(std::move(bias));
    }
    const double g = arch_.init_gate;
    params_.push_back(Mat::Constant(1, 1, g > 0 ? std::log(g / (1 - g)) : -kInf));
  }

  const FlowArchitecture& architecture() const { return arch_; }
  int dim() const { return arch_.D; }
  const std::vector<Layer>& layers() const { return layers_; }

  /// Number of trainable scalars, gate included.
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.size());
    return n;
  }

  /// sum over layers of out*in + 2*out (full weight matrix, row scales and
  /// biases); this is the figure the reference BNAF tables report.
  std::size_t bnaf_parameter_count() const { return parameter_count() - 1; }

  Vec flat_parameters() const {
    Vec v(static_cast<Eigen::Index>(parameter_count()));
    Eigen::Index k = 0;
    for (const auto& p : params_) {
      v.segment(k, p.size()) = Eigen::Map<const Vec>(p.data(), p.size());
      k += p.size();
    }
    return v;
  }

  void set_flat_parameters(const Vec& v) {
    if (static_cast<std::size_t>(v.size()) != parameter_count()) throw ParamError("parameter vector size mismatch");
    Eigen::Index k = 0;
    for (auto& p : params_) {
      Eigen::Map<Vec>(p.data(), p.size()) = v.segment(k, p.size());
      k += p.size();
    }
  }

  double gate_logit() const { return params_.back()(0, 0); }
  void set_gate_logit(double a) { params_.back()(0, 0) = a; }

  struct Forward {
    ad::Id z;
    /// n x 1 log|det dz/dx|.
    ad::Id logdet;
    /// n x 1 log density.
    ad::Id log_density;
    std::vector<ad::Id> params;
  };

  /// Records the forward pass for the rows of X on `g`. Throws NumericalError
  /// naming the layer when a pre-activation or Jacobian block is non-finite.
  Forward build(ad::Graph& g, const Mat& X, bool trainable) const {
    const int D = arch_.D;
    if (X.cols() != D) throw ParamError("flow input has " + std::to_string(X.cols()) + " columns, expected " + std::to_string(D));
    const Eigen::Index n = X.rows();
    Forward f;
    auto leaf = [&](const Mat& m) {
      const ad::Id id = trainable ? g.variable(m) : g.constant(m);
      f.params.push_back(id);
      return id;
    };
    const ad::Id x = g.constant(X);
    ad::Id h = x;
    ad::Id J = g.constant(Mat::Ones(n, D));
    Mat log_scale = Mat::Zero(n, D);
    const double log2 = std::log(2.0);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& L = layers_[l];
      const ad::Id W = leaf(params_[3 * l]);
      const ad::Id s = leaf(params_[3 * l + 1]);
      const ad::Id b = leaf(params_[3 * l + 2]);
      const ad::Id masked =
          g.add(g.mul(g.exp(W), g.constant(L.diag_mask)), g.mul(W, g.constant(L.lower_mask)));
      const ad::Id row_norm2 = g.row_sum(g.square(masked));
      const ad::Id row_scale = g.exp(g.sub(s, g.scale(g.log(row_norm2), 0.5)));
      const ad::Id Wn = g.mul_col(masked, row_scale);
      const ad::Id pre = g.add_row(g.matmul_nt(h, Wn), b);
      if (!g.value(pre).allFinite()) throw NumericalError("non-finite pre-activation", static_cast<int>(l));

      J = g.block_matvec(g.diag_blocks(Wn, D), J, D);
      const ad::Id jmax = g.block_max(J, D);
      if (!(g.value(jmax).array() > 0).all() || !g.value(jmax).allFinite())
        throw NumericalError("degenerate Jacobian block", static_cast<int>(l));
      log_scale += g.value(jmax).array().log().matrix();
      J = g.div_block(J, jmax, D);

      if (l + 1 == layers_.size()) {
        h = pre;
        break;
      }
      h = g.tanh(pre);
      // log tanh'(x) = 2 (log 2 - x - softplus(-2x))
      const ad::Id ldt = g.scale(g.sub(g.shift(g.scale(pre, -1.0), log2), g.softplus(g.scale(pre, -2.0))), 2.0);
      const ad::Id cmax = g.block_max(ldt, D);
      log_scale += g.value(cmax);
      J = g.mul(J, g.exp(g.sub_block(ldt, cmax, D)));
    }
    const ad::Id ld_inner = g.add(g.log(J), g.constant(log_scale));  // n x D
    const ad::Id gate = leaf(params_.back());
    const ad::Id log_g = g.scale(g.softplus(g.scale(gate, -1.0)), -1.0);
    const ad::Id log_1mg = g.scale(g.softplus(gate), -1.0);
    f.z = g.add(g.mul_scalar(x, g.exp(log_1mg)), g.mul_scalar(h, g.exp(log_g)));
    const ad::Id zeros = g.constant(Mat::Zero(n, D));
    const ad::Id ld = g.log_add_exp(g.add_scalar(ld_inner, log_g), g.add_scalar(zeros, log_1mg));
    f.logdet = g.row_sum(ld);
    const ad::Id quad = g.scale(g.row_sum(g.square(f.z)), -0.5);
    f.log_density = g.add(g.shift(quad, -0.5 * D * std::log(2 * kPi)), f.logdet);
    if (!g.value(f.log_density).allFinite())
      throw NumericalError("non-finite log density", static_cast<int>(layers_.size()));
    return f;
  }

  /// log p(x) for every row of X, evaluated in chunks.
  Vec log_density(const Mat& X, Eigen::Index chunk = 4096) const {
    Vec out(X.rows());
    for (Eigen::Index s = 0; s < X.rows(); s += chunk) {
      const Eigen::Index m = std::min(chunk, X.rows() - s);
      ad::Graph g;
      const auto f = build(g, X.middleRows(s, m), false);
      out.segment(s, m) = g.value(f.log_density).col(0);
    }
    return out;
  }

  double log_density(const Vec& x) const { return log_density(Mat(x.transpose()))[0]; }

  /// Forward map z = T(x) for every row of X.
  Mat transform(const Mat& X) const {
    ad::Graph g;
    const auto f = build(g, X, false);
    return g.value(f.z);
  }

  /// Mean negative log-likelihood of the rows of X; fills `grad` (flat layout) when given.
  double nll(const Mat& X, Vec* grad = nullptr) const {
    if (X.rows() < 1) throw ParamError("nll needs at least one sample");
    ad::Graph g;
    const auto f = build(g, X, grad != nullptr);
    const ad::Id loss = g.scale(g.mean(f.log_density), -1.0);
    const double value = g.value(loss)(0, 0);
    if (grad) {
      g.backward(loss);
      grad->resize(static_cast<Eigen::Index>(parameter_count()));
      Eigen::Index k = 0;
      for (const ad::Id id : f.params) {
        const Mat a = g.adjoint(id);
        grad->segment(k, a.size()) = Eigen::Map<const Vec>(a.data(), a.size());
        k += a.size();
      }
    }
    return value;
  }

 private:
  void build_layers() {
    const int D = arch_.D, hb = arch_.block();
    std::vector<int> widths{1, hb};
    for (int i = 0; i < arch_.n_hidden_layers; ++i) widths.push_back(hb);
    widths.push_back(1);
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      Layer L;
      L.in_block = widths[l];
      L.out_block = widths[l + 1];
      const int a = L.in_block, b = L.out_block;
      L.diag_mask = Mat::Zero(D * b, D * a);
      L.lower_mask = Mat::Zero(D * b, D * a);
      for (int i = 0; i < D; ++i) {
        L.diag_mask.block(i * b, i * a, b, a).setOnes();
        if (i > 0) L.lower_mask.block(i * b, 0, b, i * a).setOnes();
      }
      layers_.push_back(std::move(L));
    }
  }

  FlowArchitecture arch_;
  std::vector<Layer> layers_;
  std::vector<Mat> params_;
};

/// A flow with the gate closed: exactly the identity map.
inline FlowModel identity_flow(int D, int hidden_dim = 0, int n_hidden_layers = 1) {
  FlowArchitecture a;
  a.D = D;
  a.hidden_dim = hidden_dim > 0 ? hidden_dim : 4 * D;
  a.n_hidden_layers = n_hidden_layers;
  a.init_gate = 0.0;
  return FlowModel(a, 0);
}

}  // namespace infdef

#endif  // INFDEF_FLOW_HPP_
