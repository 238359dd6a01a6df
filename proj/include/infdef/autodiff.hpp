#ifndef INFDEF_AUTODIFF_HPP_
#define INFDEF_AUTODIFF_HPP_

// Eager tape-based reverse-mode differentiation over dense matrices.
//
// Every op computes its value immediately and records a closure that pushes
// adjoints to its parents. backward() replays the tape in reverse.

#include <cmath>
#include <functional>
#include <vector>

#include "infdef/errors.hpp"
#include "infdef/linalg.hpp"

namespace infdef::ad {

using Id = std::size_t;

class Graph {
 public:
  Graph() { nodes_.reserve(128); }

  /// Leaf without gradient.
  Id constant(Mat v) { return push(std::move(v), false, {}); }
  /// Differentiable leaf; read its gradient with adjoint() after backward().
  Id variable(Mat v) { return push(std::move(v), true, {}); }

  const Mat& value(Id i) const { return nodes_.at(i).value; }
  bool requires_grad(Id i) const { return nodes_.at(i).grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Adjoint of node i; zero-shaped like value(i) if nothing flowed into it.
  Mat adjoint(Id i) const {
    const Node& n = nodes_.at(i);
    if (n.adj.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
    return n.adj;
  }

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and propagates to all leaves.
  void backward(Id root) {
    Node& r = nodes_.at(root);
    if (r.value.size() != 1) throw ParamError("backward() needs a scalar root");
    for (auto& n : nodes_) n.adj.resize(0, 0);
    r.adj = Mat::Ones(1, 1);
    for (std::size_t k = root + 1; k-- > 0;) {
      Node& n = nodes_[k];
      if (n.back && n.adj.size() != 0) n.back(*this, n.adj);
    }
  }

  // -- elementwise ---------------------------------------------------------

  Id add(Id a, Id b) {
    same_shape(a, b, "add");
    return unary2(a, b, value(a) + value(b), [a, b](Graph& g, const Mat& G) {
      g.acc(a, G);
      g.acc(b, G);
    });
  }

  Id sub(Id a, Id b) {
    same_shape(a, b, "sub");
    return unary2(a, b, value(a) - value(b), [a, b](Graph& g, const Mat& G) {
      g.acc(a, G);
      g.acc(b, -G);
    });
  }

  Id mul(Id a, Id b) {
    same_shape(a, b, "mul");
    return unary2(a, b, value(a).cwiseProduct(value(b)), [a, b](Graph& g, const Mat& G) {
      if (g.requires_grad(a)) g.acc(a, G.cwiseProduct(g.value(b)));
      if (g.requires_grad(b)) g.acc(b, G.cwiseProduct(g.value(a)));
    });
  }

  Id scale(Id a, double c) {
    return unary(a, value(a) * c, [a, c](Graph& g, const Mat& G) { g.acc(a, G * c); });
  }

  Id shift(Id a, double c) {
    return unary(a, value(a).array() + c, [a](Graph& g, const Mat& G) { g.acc(a, G); });
  }

  Id exp(Id a) {
    Mat v = value(a).array().exp();
    const Id out = nodes_.size();
    return unary(a, std::move(v), [a, out](Graph& g, const Mat& G) { g.acc(a, G.cwiseProduct(g.value(out))); });
  }

  Id log(Id a) {
    return unary(a, value(a).array().log(),
                 [a](Graph& g, const Mat& G) { g.acc(a, G.cwiseQuotient(g.value(a))); });
  }

  Id tanh(Id a) {
    Mat v = value(a).array().tanh();
    const Id out = nodes_.size();
    return unary(a, std::move(v), [a, out](Graph& g, const Mat& G) {
      const auto& t = g.value(out).array();
      g.acc(a, (G.array() * (1.0 - t * t)).matrix());
    });
  }

  Id square(Id a) {
    return unary(a, value(a).array().square(),
                 [a](Graph& g, const Mat& G) { g.acc(a, 2.0 * G.cwiseProduct(g.value(a))); });
  }

  Id sqrt(Id a) {
    Mat v = value(a).array().sqrt();
    const Id out = nodes_.size();
    return unary(a, std::move(v), [a, out](Graph& g, const Mat& G) {
      g.acc(a, (0.5 * G.array() / g.value(out).array()).matrix());
    });
  }

  /// log(1 + exp(a)), stable for large |a|.
  Id softplus(Id a) {
    Mat v = value(a).unaryExpr([](double x) { return infdef::softplus(x); });
    return unary(a, std::move(v), [a](Graph& g, const Mat& G) {
      const Mat s = g.value(a).unaryExpr([](double x) { return sigmoid(x); });
      g.acc(a, G.cwiseProduct(s));
    });
  }

  /// log(exp(a) + exp(b)) elementwise.
  Id log_add_exp(Id a, Id b) {
    same_shape(a, b, "log_add_exp");
    Mat v = value(a).binaryExpr(value(b), [](double x, double y) { return infdef::log_add_exp(x, y); });
    const Id out = nodes_.size();
    return unary2(a, b, std::move(v), [a, b, out](Graph& g, const Mat& G) {
      const Mat& o = g.value(out);
      auto weight = [&](Id x) {
        return g.value(x).binaryExpr(o, [](double xv, double ov) {
          return std::isinf(ov) && ov < 0 ? 0.0 : std::exp(xv - ov);
        });
      };
      if (g.requires_grad(a)) g.acc(a, G.cwiseProduct(weight(a)));
      if (g.requires_grad(b)) g.acc(b, G.cwiseProduct(weight(b)));
    });
  }

  // -- broadcasting --------------------------------------------------------

  /// a (n x m) + r (1 x m) on every row.
  Id add_row(Id a, Id r) {
    check_shape(r, 1, value(a).cols(), "add_row");
    Mat v = value(a);
    v.rowwise() += value(r).row(0);
    return unary2(a, r, std::move(v), [a, r](Graph& g, const Mat& G) {
      g.acc(a, G);
      if (g.requires_grad(r)) g.acc(r, G.colwise().sum());
    });
  }

  /// a (n x m) + c (n x 1) on every column.
  Id add_col(Id a, Id c) {
    check_shape(c, value(a).rows(), 1, "add_col");
    Mat v = value(a);
    v.colwise() += value(c).col(0);
    return unary2(a, c, std::move(v), [a, c](Graph& g, const Mat& G) {
      g.acc(a, G);
      if (g.requires_grad(c)) g.acc(c, G.rowwise().sum());
    });
  }

  /// Each row i of a (n x m) scaled by c(i) (c is n x 1).
  Id mul_col(Id a, Id c) {
    check_shape(c, value(a).rows(), 1, "mul_col");
    Mat v = value(c).col(0).asDiagonal() * value(a);
    return unary2(a, c, std::move(v), [a, c](Graph& g, const Mat& G) {
      if (g.requires_grad(a)) g.acc(a, g.value(c).col(0).asDiagonal() * G);
      if (g.requires_grad(c)) g.acc(c, G.cwiseProduct(g.value(a)).rowwise().sum());
    });
  }

  /// a + s for a 1x1 node s.
  Id add_scalar(Id a, Id s) {
    check_shape(s, 1, 1, "add_scalar");
    return unary2(a, s, value(a).array() + value(s)(0, 0), [a, s](Graph& g, const Mat& G) {
      g.acc(a, G);
      if (g.requires_grad(s)) g.acc(s, Mat::Constant(1, 1, G.sum()));
    });
  }

  /// a * s for a 1x1 node s.
  Id mul_scalar(Id a, Id s) {
    check_shape(s, 1, 1, "mul_scalar");
    return unary2(a, s, value(a) * value(s)(0, 0), [a, s](Graph& g, const Mat& G) {
      if (g.requires_grad(a)) g.acc(a, G * g.value(s)(0, 0));
      if (g.requires_grad(s)) g.acc(s, Mat::Constant(1, 1, G.cwiseProduct(g.value(a)).sum()));
    });
  }

  // -- products and reductions ---------------------------------------------

  Id matmul(Id a, Id b) {
    if (value(a).cols() != value(b).rows()) throw ParamError("matmul: inner dimensions differ");
    return unary2(a, b, value(a) * value(b), [a, b](Graph& g, const Mat& G) {
      if (g.requires_grad(a)) g.acc(a, G * g.value(b).transpose());
      if (g.requires_grad(b)) g.acc(b, g.value(a).transpose() * G);
    });
  }

  /// a * b^T.
  Id matmul_nt(Id a, Id b) {
    if (value(a).cols() != value(b).cols()) throw ParamError("matmul_nt: inner dimensions differ");
    return unary2(a, b, value(a) * value(b).transpose(), [a, b](Graph& g, const Mat& G) {
      if (g.requires_grad(a)) g.acc(a, G * g.value(b));
      if (g.requires_grad(b)) g.acc(b, G.transpose() * g.value(a));
    });
  }

  Id sum(Id a) {
    return unary(a, Mat::Constant(1, 1, value(a).sum()), [a](Graph& g, const Mat& G) {
      const Mat& v = g.value(a);
      g.acc(a, Mat::Constant(v.rows(), v.cols(), G(0, 0)));
    });
  }

  Id mean(Id a) {
    const double n = static_cast<double>(value(a).size());
    return unary(a, Mat::Constant(1, 1, value(a).sum() / n), [a, n](Graph& g, const Mat& G) {
      const Mat& v = g.value(a);
      g.acc(a, Mat::Constant(v.rows(), v.cols(), G(0, 0) / n));
    });
  }

  /// n x m -> n x 1.
  Id row_sum(Id a) {
    return unary(a, value(a).rowwise().sum(), [a](Graph& g, const Mat& G) {
      const Mat& v = g.value(a);
      g.acc(a, G.col(0).replicate(1, v.cols()));
    });
  }

  // -- block-autoregressive helpers ----------------------------------------
  //
  // A "blocked" matrix with D blocks of width w is an n x (D*w) matrix whose
  // columns [i*w, (i+1)*w) belong to block i.

  /// Stacks the D diagonal blocks (each b x a) of W ((D*b) x (D*a)) into a (D*b) x a matrix.
  Id diag_blocks(Id W, int D) {
    const Mat& w = value(W);
    if (w.rows() % D != 0 || w.cols() % D != 0) throw ParamError("diag_blocks: shape not divisible by D");
    const Eigen::Index b = w.rows() / D, a = w.cols() / D;
    Mat v(D * b, a);
    for (int i = 0; i < D; ++i) v.block(i * b, 0, b, a) = w.block(i * b, i * a, b, a);
    return unary(W, std::move(v), [W, D, a, b](Graph& g, const Mat& G) {
      const Mat& w = g.value(W);
      Mat gw = Mat::Zero(w.rows(), w.cols());
      for (int i = 0; i < D; ++i) gw.block(i * b, i * a, b, a) = G.block(i * b, 0, b, a);
      g.acc(W, gw);
    });
  }

  /// Per-block matrix-vector products: out[:, block i] = J[:, block i] * Wd_i^T,
  /// with Wd the (D*b) x a stacked diagonal blocks and J an n x (D*a) blocked matrix.
  Id block_matvec(Id Wd, Id J, int D) {
    const Mat& wd = value(Wd);
    const Mat& j = value(J);
    const Eigen::Index b = wd.rows() / D, a = wd.cols();
    if (wd.rows() % D != 0 || j.cols() != D * a) throw ParamError("block_matvec: shape mismatch");
    Mat v(j.rows(), D * b);
    for (int i = 0; i < D; ++i)
      v.middleCols(i * b, b).noalias() = j.middleCols(i * a, a) * wd.middleRows(i * b, b).transpose();
    return unary2(Wd, J, std::move(v), [Wd, J, D, a, b](Graph& g, const Mat& G) {
      const Mat& wd = g.value(Wd);
      const Mat& j = g.value(J);
      if (g.requires_grad(J)) {
        Mat gj(j.rows(), j.cols());
        for (int i = 0; i < D; ++i) gj.middleCols(i * a, a).noalias() = G.middleCols(i * b, b) * wd.middleRows(i * b, b);
        g.acc(J, gj);
      }
      if (g.requires_grad(Wd)) {
        Mat gw(wd.rows(), wd.cols());
        for (int i = 0; i < D; ++i)
          gw.middleRows(i * b, b).noalias() = G.middleCols(i * b, b).transpose() * j.middleCols(i * a, a);
        g.acc(Wd, gw);
      }
    });
  }

  /// Per-row, per-block maximum of an n x (D*w) matrix; returns an n x D constant (no gradient).
  Id block_max(Id X, int D) {
    const Mat& x = value(X);
    const Eigen::Index w = x.cols() / D;
    Mat v(x.rows(), D);
    for (int i = 0; i < D; ++i) v.col(i) = x.middleCols(i * w, w).rowwise().maxCoeff();
    return constant(std::move(v));
  }

  /// X[:, block i] - c[:, i] for X n x (D*w) and c n x D.
  Id sub_block(Id X, Id c, int D) {
    const Eigen::Index w = value(X).cols() / D;
    check_shape(c, value(X).rows(), D, "sub_block");
    Mat v = value(X);
    for (int i = 0; i < D; ++i) v.middleCols(i * w, w).colwise() -= value(c).col(i);
    return unary2(X, c, std::move(v), [X, c, D, w](Graph& g, const Mat& G) {
      g.acc(X, G);
      if (g.requires_grad(c)) {
        Mat gc(G.rows(), D);
        for (int i = 0; i < D; ++i) gc.col(i) = -G.middleCols(i * w, w).rowwise().sum();
        g.acc(c, gc);
      }
    });
  }

  /// X[:, block i] / c[:, i] for X n x (D*w) and c n x D.
  Id div_block(Id X, Id c, int D) {
    const Eigen::Index w = value(X).cols() / D;
    check_shape(c, value(X).rows(), D, "div_block");
    Mat v = value(X);
    for (int i = 0; i < D; ++i) v.middleCols(i * w, w).array().colwise() /= value(c).col(i).array();
    const Id out = nodes_.size();
    return unary2(X, c, std::move(v), [X, c, D, w, out](Graph& g, const Mat& G) {
      const Mat& cv = g.value(c);
      if (g.requires_grad(X)) {
        Mat gx = G;
        for (int i = 0; i < D; ++i) gx.middleCols(i * w, w).array().colwise() /= cv.col(i).array();
        g.acc(X, gx);
      }
      if (g.requires_grad(c)) {
        const Mat& o = g.value(out);
        Mat gc(G.rows(), D);
        for (int i = 0; i < D; ++i)
          gc.col(i) = -(G.middleCols(i * w, w).cwiseProduct(o.middleCols(i * w, w))).rowwise().sum().array() /
                      cv.col(i).array();
        g.acc(c, gc);
      }
    });
  }

 private:
  using Back = std::function<void(Graph&, const Mat&)>;
  struct Node {
    Mat value;
    Mat adj;
    bool grad = false;
    Back back;
  };

  static double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  }

  Id push(Mat v, bool grad, Back back) {
    nodes_.push_back({std::move(v), Mat(), grad, std::move(back)});
    return nodes_.size() - 1;
  }

  Id unary(Id a, Mat v, Back back) {
    const bool g = requires_grad(a);
    return push(std::move(v), g, g ? std::move(back) : Back{});
  }

  Id unary2(Id a, Id b, Mat v, Back back) {
    const bool g = requires_grad(a) || requires_grad(b);
    return push(std::move(v), g, g ? std::move(back) : Back{});
  }

  void acc(Id i, const Mat& g) {
    Node& n = nodes_[i];
    if (!n.grad) return;
    if (n.adj.size() == 0)
      n.adj = g;
    else
      n.adj += g;
  }

  void same_shape(Id a, Id b, const char* op) const {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
      throw ParamError(std::string(op) + ": shape mismatch");
  }

  void check_shape(Id a, Eigen::Index r, Eigen::Index c, const char* op) const {
    if (value(a).rows() != r || value(a).cols() != c) throw ParamError(std::string(op) + ": shape mismatch");
  }

  std::vector<Node> nodes_;
};

}  // namespace infdef::ad

#endif  // INFDEF_AUTODIFF_HPP_
