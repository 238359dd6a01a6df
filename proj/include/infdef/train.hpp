#ifndef INFDEF_TRAIN_HPP_
#define INFDEF_TRAIN_HPP_

// Minibatch maximum-likelihood training with Adam, patience-based learning
// rate decay and best-on-validation parameter selection.

#include <chrono>
#include <cstring>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "infdef/flow.hpp"

namespace infdef {

struct TrainConfig {
  std::size_t batch_size = 200;
  std::size_t max_iterations = 20000;
  double initial_lr = 0.1;
  double lr_decay = 0.5;
  /// Optimisation steps without validation improvement before the rate decays.
  std::size_t lr_patience = 2000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool amsgrad = true;
  /// Global gradient-norm clip; 0 disables clipping.
  double clip_norm = 0.1;
  double validation_fraction = 0.1;
  std::size_t validation_interval = 100;
  /// Validation NLL must drop by more than this to count as an improvement.
  double improvement_threshold = 1e-4;
  std::size_t max_nonfinite_steps = 50;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size < 1 || max_iterations < 1 || lr_patience < 1 || validation_interval < 1)
      throw ParamError("training counts must be positive");
    if (!(initial_lr > 0)) throw ParamError("initial_lr must be positive");
    if (!(lr_decay > 0 && lr_decay < 1)) throw ParamError("lr_decay must lie in (0, 1)");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && eps > 0)) throw ParamError("invalid Adam constants");
    if (!(validation_fraction > 0 && validation_fraction < 1)) throw ParamError("validation_fraction must lie in (0, 1)");
    if (!(clip_norm >= 0)) throw ParamError("clip_norm must be >= 0");
  }

  json to_json() const {
    return {{"batch_size", batch_size},       {"max_iterations", max_iterations},
            {"initial_lr", initial_lr},       {"lr_decay", lr_decay},
            {"lr_patience", lr_patience},     {"beta1", beta1},
            {"beta2", beta2},                 {"eps", eps},
            {"amsgrad", amsgrad},             {"clip_norm", clip_norm},
            {"validation_fraction", validation_fraction},
            {"validation_interval", validation_interval},
            {"improvement_threshold", improvement_threshold},
            {"max_nonfinite_steps", max_nonfinite_steps},
            {"seed", seed}};
  }
};

/// Adam / AMSGrad on a flat parameter vector.
class Adam {
 public:
  Adam(std::size_t n, double beta1, double beta2, double eps, bool amsgrad)
      : m_(Vec::Zero(static_cast<Eigen::Index>(n))),
        v_(Vec::Zero(static_cast<Eigen::Index>(n))),
        vmax_(Vec::Zero(static_cast<Eigen::Index>(n))),
        b1_(beta1),
        b2_(beta2),
        eps_(eps),
        amsgrad_(amsgrad) {}

  void step(Vec& theta, const Vec& grad, double lr) {
    ++t_;
    m_ = b1_ * m_ + (1 - b1_) * grad;
    v_ = b2_ * v_ + (1 - b2_) * grad.cwiseProduct(grad);
    const double c1 = 1 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1 - std::pow(b2_, static_cast<double>(t_));
    const Vec* v = &v_;
    if (amsgrad_) {
      vmax_ = vmax_.cwiseMax(v_);
      v = &vmax_;
    }
    theta.array() -= lr * (m_.array() / c1) / ((v->array() / c2).sqrt() + eps_);
  }

  std::size_t steps() const { return t_; }

 private:
  Vec m_, v_, vmax_;
  double b1_, b2_, eps_;
  bool amsgrad_;
  std::size_t t_ = 0;
};

struct TraceRow {
  std::size_t iter = 0;
  double train_nll = 0.0;
  double val_nll = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  FlowModel flow;
  std::vector<TraceRow> trace;
  double best_val_nll = kInf;
  std::size_t best_iter = 0;
  std::size_t iterations = 0;
  std::size_t nonfinite_steps = 0;
  double wall_time_s = 0.0;
};

/// Trains `flow` on the rows of `data`. The last validation_fraction of a
/// seeded shuffle is held out; the returned flow carries the parameters with
/// the best validation NLL. Deterministic for a fixed seed.
inline TrainResult train(FlowModel flow, const Mat& data, const TrainConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const auto n = static_cast<std::size_t>(data.rows());
  if (n < cfg.batch_size) throw ParamError("training needs at least batch_size samples");
  if (data.cols() != flow.dim()) throw ParamError("training data dimension does not match the flow");
  if (!data.allFinite()) throw ParamError("training data contains non-finite values");

  Rng rng(cfg.seed);
  std::vector<Eigen::Index> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.validation_fraction * n));
  const std::size_t n_train = n - n_val;
  if (n_train < cfg.batch_size) throw ParamError("training split smaller than batch_size");
  Mat train_x(n_train, data.cols()), val_x(n_val, data.cols());
  for (std::size_t i = 0; i < n_train; ++i) train_x.row(i) = data.row(idx[i]);
  for (std::size_t i = 0; i < n_val; ++i) val_x.row(i) = data.row(idx[n_train + i]);

  auto validation_nll = [&](const FlowModel& f) {
    try {
      return -f.log_density(val_x).mean();
    } catch (const NumericalError&) {
      return kInf;
    }
  };

  TrainResult res{flow, {}, kInf, 0, 0, 0, 0.0};
  Vec theta = flow.flat_parameters();
  Vec best = theta;
  Adam opt(static_cast<std::size_t>(theta.size()), cfg.beta1, cfg.beta2, cfg.eps, cfg.amsgrad);
  double lr = cfg.initial_lr;
  res.best_val_nll = validation_nll(flow);
  std::size_t last_improvement = 0;
  std::size_t consecutive_bad = 0;

  std::vector<Eigen::Index> order(n_train);
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = n_train;
  Mat batch(cfg.batch_size, data.cols());
  Vec grad;
  double running = 0.0;
  std::size_t running_n = 0;

  for (std::size_t it = 1; it <= cfg.max_iterations; ++it) {
    if (cursor + cfg.batch_size > n_train) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    for (std::size_t k = 0; k < cfg.batch_size; ++k) batch.row(k) = train_x.row(order[cursor + k]);
    cursor += cfg.batch_size;

    double loss = kInf;
    try {
      loss = flow.nll(batch, &grad);
    } catch (const NumericalError&) {
      loss = kInf;
    }
    if (!std::isfinite(loss) || !grad.allFinite()) {
      ++res.nonfinite_steps;
      if (++consecutive_bad >= cfg.max_nonfinite_steps)
        throw DivergenceError("loss non-finite for " + std::to_string(consecutive_bad) +
                              " consecutive steps at iteration " + std::to_string(it));
      // fall back to the best parameters seen so far and keep going
      theta = best;
      flow.set_flat_parameters(theta);
      continue;
    }
    consecutive_bad = 0;
    running += loss;
    ++running_n;
    if (cfg.clip_norm > 0) {
      const double gn = grad.norm();
      if (gn > cfg.clip_norm) grad *= cfg.clip_norm / gn;
    }
    opt.step(theta, grad, lr);
    flow.set_flat_parameters(theta);
    res.iterations = it;

    if (it % cfg.validation_interval == 0 || it == cfg.max_iterations) {
      const double v = validation_nll(flow);
      if (v < res.best_val_nll - cfg.improvement_threshold) {
        res.best_val_nll = v;
        res.best_iter = it;
        best = theta;
        last_improvement = it;
      } else if (v < res.best_val_nll) {
        res.best_val_nll = v;
        res.best_iter = it;
        best = theta;
      }
      res.trace.push_back({it, running_n ? running / running_n : kInf, v, lr});
      running = 0.0;
      running_n = 0;
    }
    if (it - last_improvement >= cfg.lr_patience) {
      lr *= cfg.lr_decay;
      last_improvement = it;
    }
  }
  flow.set_flat_parameters(best);
  res.flow = flow;
  res.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

inline void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << "iter,train_nll,val_nll,lr\n";
  for (const auto& r : trace)
    out << r.iter << ',' << fmt_double(r.train_nll) << ',' << fmt_double(r.val_nll) << ',' << fmt_double(r.lr) << '\n';
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

struct FlowPreset {
  FlowArchitecture arch;
  TrainConfig train;
};

/// Named presets for a flow on R^D learning a density of intrinsic dimension d.
///
/// desk:  hidden 50*D, 3 hidden layers, 20k iterations.
/// paper: circle-type data (d = 1): hidden 50*D, 3 hidden layers, 70k
///        iterations (100k for D >= 15); surfaces (d = 2): 6 hidden layers,
///        hidden 210 (200 for D = 4), 50k iterations.
/// highd: hidden 5*D, 3 hidden layers, 5k iterations; a reduced budget for
///        single-core runs in high ambient dimension.
inline FlowPreset flow_preset(const std::string& name, int D, int d) {
  FlowPreset p;
  p.arch.D = D;
  if (name == "desk") {
    p.arch.hidden_dim = 50 * D;
    p.arch.n_hidden_layers = 3;
    p.train.max_iterations = 20000;
  } else if (name == "paper") {
    if (d <= 1) {
      p.arch.hidden_dim = 50 * D;
      p.arch.n_hidden_layers = 3;
      p.train.max_iterations = D >= 15 ? 100000 : 70000;
    } else {
      p.arch.n_hidden_layers = 6;
      p.arch.hidden_dim = D == 4 ? 200 : 210;
      if (p.arch.hidden_dim % D != 0) p.arch.hidden_dim = D * ((p.arch.hidden_dim + D - 1) / D);
      p.train.max_iterations = 50000;
    }
  } else if (name == "highd") {
    p.arch.hidden_dim = 5 * D;
    p.arch.n_hidden_layers = 3;
    p.train.max_iterations = 5000;
  } else {
    throw ConfigError("preset", "unknown preset '" + name + "' (expected desk, paper or highd)");
  }
  return p;
}

// ---------------------------------------------------------------------------
// Checkpoints: magic, uint64 header length, JSON header, little-endian doubles.
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'I', 'D', 'F', 'L', 'O', 'W', '0', '1'};

namespace detail {

inline void put_u64_le(std::ostream& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64_le(std::istream& in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    const int c = in.get();
    if (c == EOF) throw Error("truncated checkpoint");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

}  // namespace detail

/// `extra` is merged into the header (seed, iteration, validation NLL, ...).
inline void save_checkpoint(const std::string& path, const FlowModel& flow, const json& extra = json::object()) {
  json header = extra;
  header["architecture"] = flow.architecture().to_json();
  header["parameter_count"] = flow.parameter_count();
  header["bnaf_parameter_count"] = flow.bnaf_parameter_count();
  const std::string h = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(kCheckpointMagic, 8);
  detail::put_u64_le(out, h.size());
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  const Vec theta = flow.flat_parameters();
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &theta[i], 8);
    detail::put_u64_le(out, bits);
  }
  if (!out) throw Error("write failed for '" + path + "'");
}

struct Checkpoint {
  FlowModel flow;
  json header;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path + "'");
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw Error("'" + path + "' is not a flow checkpoint");
  const std::uint64_t len = detail::get_u64_le(in);
  std::string h(len, '\0');
  in.read(h.data(), static_cast<std::streamsize>(len));
  if (!in) throw Error("truncated checkpoint header");
  json header = json::parse(h);
  FlowModel flow(FlowArchitecture::from_json(header.at("architecture")), 0);
  Vec theta(static_cast<Eigen::Index>(flow.parameter_count()));
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const std::uint64_t bits = detail::get_u64_le(in);
    std::memcpy(&theta[i], &bits, 8);
  }
  flow.set_flat_parameters(theta);
  return {std::move(flow), std::move(header)};
}

}  // namespace infdef

#endif  // INFDEF_TRAIN_HPP_
