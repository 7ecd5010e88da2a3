#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "cgpo/errors.hpp"
#include "cgpo/tensor.hpp"

namespace cgpo {

enum class Activation { mish, relu, tanh, identity };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::mish: return "mish";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
  }
  return "identity";
}

inline Activation activation_from_string(const std::string& name) {
  if (name == "mish") return Activation::mish;
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + name + "'");
}

namespace detail {

// e^x == u / den to ~1 ulp on [-700, 700] (inputs are clamped there). Kept
// as a ratio so callers can fold the division into their own. Branch-free so
// block loops vectorize once FP traps are not modelled (-fno-trapping-math).
inline void exp_ratio(double x, double& u, double& den) {
  x = std::clamp(x, -700.0, 700.0);
  const double n = std::nearbyint(x * 1.4426950408889634074);
  double r = x - n * 6.93145751953125E-1;
  r -= n * 1.42860682030941723212E-6;
  const double rr = r * r;
  const double p =
      r * ((1.26177193074810590878E-4 * rr + 3.02994407707441961300E-2) * rr + 9.99999999999999999910E-1);
  const double q =
      ((3.00198505138664455042E-6 * rr + 2.52448340349684104192E-3) * rr + 2.27265548208155028766E-1) * rr +
      2.00000000000000000009E0;
  const auto bits = static_cast<std::uint64_t>(static_cast<std::int64_t>(n) + 1023) << 52;
  u = (q + p) * std::bit_cast<double>(bits);
  den = q - p;
}

// tanh(softplus(x)) == m / (m + 2) with m = e^x (e^x + 2).
inline double mish(double x) {
  double u = 0.0, d = 1.0;
  exp_ratio(std::min(x, 20.0), u, d);
  const double m = u * (u + 2.0 * d);
  const double y = x * m / (m + 2.0 * d * d);
  return x > 20.0 ? x : y;
}

inline double mish_grad(double x) {
  double u = 0.0, d = 1.0;
  exp_ratio(std::min(x, 20.0), u, d);
  const double m = u * (u + 2.0 * d);
  const double ts = m / (m + 2.0 * d * d);
  const double g = ts + x * (1.0 - ts * ts) * (u / (u + d));
  return x > 20.0 ? 1.0 : g;
}

inline double activate(Activation a, double x) {
  switch (a) {
    case Activation::mish: return mish(x);
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::tanh: return std::tanh(x);
    case Activation::identity: return x;
  }
  return x;
}

// Derivative expressed through the input x and output y of the activation.
inline double activate_grad(Activation a, double x, double y) {
  switch (a) {
    case Activation::mish: return mish_grad(x);
    case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::tanh: return 1.0 - y * y;
    case Activation::identity: return 1.0;
  }
  return 1.0;
}

inline void activate_inplace(Activation a, double* __restrict data, std::size_t n) {
  switch (a) {
    case Activation::mish:
      for (std::size_t i = 0; i < n; ++i) data[i] = mish(data[i]);
      break;
    case Activation::relu:
      for (std::size_t i = 0; i < n; ++i) data[i] = data[i] > 0.0 ? data[i] : 0.0;
      break;
    case Activation::tanh:
      for (std::size_t i = 0; i < n; ++i) data[i] = std::tanh(data[i]);
      break;
    case Activation::identity: break;
  }
}

/// Writes the activation derivative at inputs `x` (outputs `y`) into `out`.
inline void activate_grad_block(Activation a, const double* __restrict x, const double* __restrict y,
                                double* __restrict out, std::size_t n) {
  switch (a) {
    case Activation::mish:
      for (std::size_t i = 0; i < n; ++i) out[i] = mish_grad(x[i]);
      break;
    case Activation::relu:
      for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? 1.0 : 0.0;
      break;
    case Activation::tanh:
      for (std::size_t i = 0; i < n; ++i) out[i] = 1.0 - y[i] * y[i];
      break;
    case Activation::identity:
      for (std::size_t i = 0; i < n; ++i) out[i] = 1.0;
      break;
  }
}

}  // namespace detail

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;
};

/// Append-only record of tensor operations for reverse-mode differentiation.
///
/// Nodes are stored in creation order, so parents always precede children and
/// a single reverse sweep visits every node once. A tape is single-use:
/// after `backward` it must be `reset` before recording again.
class Tape {
 public:
  using Backprop = std::function<void(Tape&, std::size_t)>;

  Var constant(Tensor value) { return push(std::move(value), false, nullptr); }
  Var variable(Tensor value) { return push(std::move(value), true, nullptr); }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient of the last backward output w.r.t. `v`; zeros if unreached.
  Tensor grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.grad.empty() ? zeros_like(n.value) : n.grad;
  }

  std::vector<Tensor> grads(std::span<const Var> vars) const {
    std::vector<Tensor> out;
    out.reserve(vars.size());
    for (auto v : vars) out.push_back(grad(v));
    return out;
  }

  void backward(Var output) {
    if (consumed_) throw ContractError("tape already consumed by a previous backward pass");
    Node& out = nodes_.at(output.id);
    if (out.value.size() != 1) {
      throw ContractError("backward requires a scalar output, got shape " +
                          shape_string(out.value.shape()));
    }
    consumed_ = true;
    if (!out.requires_grad) return;
    grad_ref(output.id).fill(1.0);
    for (std::size_t i = output.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.requires_grad && n.backprop && !n.grad.empty()) n.backprop(*this, i);
    }
  }

  void reset() {
    nodes_.clear();
    consumed_ = false;
  }

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  // Used by operation implementations.
  Var push(Tensor value, bool requires_grad, Backprop backprop) {
    if (consumed_) throw ContractError("recording on a consumed tape; call reset() first");
    nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, std::move(backprop)});
    return Var{this, nodes_.size() - 1};
  }

  Tensor& grad_ref(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = zeros_like(n.value);
    return n.grad;
  }
  const Tensor& grad_of(std::size_t id) const { return nodes_[id].grad; }
  const Tensor& value_of(std::size_t id) const { return nodes_[id].value; }
  bool needs(std::size_t id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backprop backprop;
  };

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

namespace ad {

namespace detail {

inline Tape& same_tape(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) throw ContractError("operands on different tapes");
  return *a.tape;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
}

}  // namespace detail

/// x[B, n] * w[n, m]
inline Var matmul(Var x, Var w) {
  Tape& tape = detail::same_tape(x, w);
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(w);
  if (xv.cols() != wv.rows()) {
    throw DimensionError("matmul: " + shape_string(xv.shape()) + " x " + shape_string(wv.shape()));
  }
  Tensor out = Tensor::matrix(xv.rows(), wv.cols());
  out.mat().noalias() = xv.mat() * wv.mat();
  const bool rg = tape.requires_grad(x) || tape.requires_grad(w);
  return tape.push(std::move(out), rg, [xi = x.id, wi = w.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    if (t.needs(xi)) t.grad_ref(xi).mat().noalias() += g.mat() * t.value_of(wi).mat().transpose();
    if (t.needs(wi)) t.grad_ref(wi).mat().noalias() += t.value_of(xi).mat().transpose() * g.mat();
  });
}

/// x[B, m] + b[m] broadcast over rows.
inline Var add_bias(Var x, Var b) {
  Tape& tape = detail::same_tape(x, b);
  const Tensor& xv = tape.value(x);
  const Tensor& bv = tape.value(b);
  if (bv.size() != xv.cols()) {
    throw DimensionError("add_bias: " + shape_string(xv.shape()) + " + " + shape_string(bv.shape()));
  }
  Tensor out = xv;
  out.mat().rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bv.data(), bv.size());
  const bool rg = tape.requires_grad(x) || tape.requires_grad(b);
  return tape.push(std::move(out), rg, [xi = x.id, bi = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    if (t.needs(xi)) t.grad_ref(xi).mat() += g.mat();
    if (t.needs(bi)) {
      Tensor& gb = t.grad_ref(bi);
      Eigen::Map<Eigen::RowVectorXd>(gb.data(), gb.size()) += g.mat().colwise().sum();
    }
  });
}

inline Var activate(Var x, Activation act) {
  Tape& tape = *x.tape;
  if (act == Activation::identity) return x;
  const Tensor& xv = tape.value(x);
  Tensor out = xv;
  cgpo::detail::activate_inplace(act, out.data(), out.size());
  return tape.push(std::move(out), tape.requires_grad(x), [xi = x.id, act](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    const Tensor& xv = t.value_of(xi);
    const Tensor& yv = t.value_of(self);
    std::vector<double> local(g.size());
    cgpo::detail::activate_grad_block(act, xv.data(), yv.data(), local.data(), local.size());
    Tensor& gx = t.grad_ref(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * local[i];
  });
}

/// ca * a + cb * b
inline Var lincomb(Var a, double ca, Var b, double cb) {
  Tape& tape = detail::same_tape(a, b);
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  detail::require_same_shape(av, bv, "lincomb");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ca * av[i] + cb * bv[i];
  const bool rg = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.push(std::move(out), rg, [ai = a.id, bi = b.id, ca, cb](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    if (t.needs(ai)) t.grad_ref(ai).mat() += ca * g.mat();
    if (t.needs(bi)) t.grad_ref(bi).mat() += cb * g.mat();
  });
}

inline Var add(Var a, Var b) { return lincomb(a, 1.0, b, 1.0); }
inline Var sub(Var a, Var b) { return lincomb(a, 1.0, b, -1.0); }

inline Var scale(Var a, double c) {
  Tape& tape = *a.tape;
  Tensor out = tape.value(a);
  out.mat() *= c;
  return tape.push(std::move(out), tape.requires_grad(a), [ai = a.id, c](Tape& t, std::size_t self) {
    t.grad_ref(ai).mat() += c * t.grad_of(self).mat();
  });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
  Tape& tape = detail::same_tape(a, b);
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  detail::require_same_shape(av, bv, "mul");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const bool rg = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.push(std::move(out), rg, [ai = a.id, bi = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    if (t.needs(ai)) {
      const Tensor& bv = t.value_of(bi);
      Tensor& ga = t.grad_ref(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.needs(bi)) {
      const Tensor& av = t.value_of(ai);
      Tensor& gb = t.grad_ref(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

inline Var square(Var a) {
  Tape& tape = *a.tape;
  const Tensor& av = tape.value(a);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * av[i];
  return tape.push(std::move(out), tape.requires_grad(a), [ai = a.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    const Tensor& av = t.value_of(ai);
    Tensor& ga = t.grad_ref(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * av[i] * g[i];
  });
}

inline Var sum(Var a) {
  Tape& tape = *a.tape;
  const Tensor& av = tape.value(a);
  double s = 0.0;
  for (double v : av.values()) s += v;
  return tape.push(Tensor::scalar(s), tape.requires_grad(a), [ai = a.id](Tape& t, std::size_t self) {
    const double g = t.grad_of(self)[0];
    for (double& v : t.grad_ref(ai).values()) v += g;
  });
}

inline Var mean(Var a) {
  const auto n = a.tape->value(a).size();
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

/// Per-row sum: [B, m] -> [B, 1].
inline Var row_sum(Var a) {
  Tape& tape = *a.tape;
  const Tensor& av = tape.value(a);
  Tensor out = Tensor::matrix(av.rows(), 1);
  out.mat() = av.mat().rowwise().sum();
  return tape.push(std::move(out), tape.requires_grad(a), [ai = a.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    Tensor& ga = t.grad_ref(ai);
    for (std::size_t r = 0; r < ga.rows(); ++r) {
      for (double& v : ga.row_span(r)) v += g[r];
    }
  });
}

/// Multiplies row r of `a` by the constant w[r].
inline Var scale_rows(Var a, std::vector<double> w) {
  Tape& tape = *a.tape;
  const Tensor& av = tape.value(a);
  if (w.size() != av.rows()) throw DimensionError("scale_rows: weight count != rows");
  Tensor out = av;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (double& v : out.row_span(r)) v *= w[r];
  }
  return tape.push(std::move(out), tape.requires_grad(a),
                   [ai = a.id, w = std::move(w)](Tape& t, std::size_t self) {
                     const Tensor& g = t.grad_of(self);
                     Tensor& ga = t.grad_ref(ai);
                     for (std::size_t r = 0; r < ga.rows(); ++r) {
                       auto gr = g.row_span(r);
                       auto dst = ga.row_span(r);
                       for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += w[r] * gr[c];
                     }
                   });
}

inline Var concat_cols(Var a, Var b) {
  Tape& tape = detail::same_tape(a, b);
  Tensor out = cgpo::concat_cols(tape.value(a), tape.value(b));
  const bool rg = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.push(std::move(out), rg, [ai = a.id, bi = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    const std::size_t ca = t.value_of(ai).cols();
    const std::size_t cb = t.value_of(bi).cols();
    if (t.needs(ai)) {
      Tensor& ga = t.grad_ref(ai);
      ga.mat() += g.mat().leftCols(static_cast<Eigen::Index>(ca));
    }
    if (t.needs(bi)) {
      Tensor& gb = t.grad_ref(bi);
      gb.mat() += g.mat().rightCols(static_cast<Eigen::Index>(cb));
    }
  });
}

/// Clamps column c into [lo[c], hi[c]]; gradient passes only where unclamped.
inline Var clip_cols(Var a, std::vector<double> lo, std::vector<double> hi) {
  Tape& tape = *a.tape;
  const Tensor& av = tape.value(a);
  if (lo.size() != av.cols() || hi.size() != av.cols()) {
    throw DimensionError("clip_cols: bound size != columns");
  }
  Tensor out = av;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row_span(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = std::clamp(row[c], lo[c], hi[c]);
  }
  return tape.push(std::move(out), tape.requires_grad(a),
                   [ai = a.id, lo = std::move(lo), hi = std::move(hi)](Tape& t, std::size_t self) {
                     const Tensor& g = t.grad_of(self);
                     const Tensor& av = t.value_of(ai);
                     Tensor& ga = t.grad_ref(ai);
                     const std::size_t cols = av.cols();
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       const std::size_t c = i % cols;
                       if (av[i] > lo[c] && av[i] < hi[c]) ga[i] += g[i];
                     }
                   });
}

/// Per row: stable-sort ascending, average the lowest (cols - k) entries.
/// [B, M] -> [B, 1]. The gradient routes 1/(M-k) to each kept entry.
inline Var truncated_mean_rows(Var q, std::size_t k) {
  Tape& tape = *q.tape;
  const Tensor& qv = tape.value(q);
  const std::size_t m = qv.cols();
  if (k >= m) throw ConfigError("truncation count k must be < number of quantiles");
  const std::size_t keep = m - k;
  Tensor out = Tensor::matrix(qv.rows(), 1);
  std::vector<std::size_t> kept(qv.rows() * keep);
  std::vector<std::size_t> order(m);
  for (std::size_t r = 0; r < qv.rows(); ++r) {
    auto row = qv.row_span(r);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return row[a] < row[b]; });
    double s = 0.0;
    for (std::size_t j = 0; j < keep; ++j) {
      s += row[order[j]];
      kept[r * keep + j] = order[j];
    }
    out[r] = s / static_cast<double>(keep);
  }
  return tape.push(std::move(out), tape.requires_grad(q),
                   [qi = q.id, kept = std::move(kept), keep](Tape& t, std::size_t self) {
                     const Tensor& g = t.grad_of(self);
                     Tensor& gq = t.grad_ref(qi);
                     const double inv = 1.0 / static_cast<double>(keep);
                     for (std::size_t r = 0; r < g.size(); ++r) {
                       auto row = gq.row_span(r);
                       for (std::size_t j = 0; j < keep; ++j) row[kept[r * keep + j]] += g[r] * inv;
                     }
                   });
}

/// Quantile-Huber regression of each row's quantiles q[r, :] onto the scalar
/// target y[r]. Quantile m uses the midpoint level (2m + 1) / (2M), m from 0.
/// Returns the mean over rows and quantiles.
inline Var quantile_huber_loss(Var q, std::vector<double> y, double kappa = 1.0) {
  Tape& tape = *q.tape;
  const Tensor& qv = tape.value(q);
  if (y.size() != qv.rows()) throw DimensionError("quantile_huber_loss: target count != rows");
  const std::size_t m = qv.cols();
  const double denom = static_cast<double>(qv.size());
  double total = 0.0;
  for (std::size_t r = 0; r < qv.rows(); ++r) {
    for (std::size_t j = 0; j < m; ++j) {
      const double level = (2.0 * static_cast<double>(j) + 1.0) / (2.0 * static_cast<double>(m));
      const double u = y[r] - qv(r, j);
      const double au = std::abs(u);
      const double huber = au <= kappa ? 0.5 * u * u : kappa * (au - 0.5 * kappa);
      total += std::abs(level - (u < 0.0 ? 1.0 : 0.0)) * huber / kappa;
    }
  }
  return tape.push(Tensor::scalar(total / denom), tape.requires_grad(q),
                   [qi = q.id, y = std::move(y), kappa, denom](Tape& t, std::size_t self) {
                     const double g = t.grad_of(self)[0];
                     const Tensor& qv = t.value_of(qi);
                     Tensor& gq = t.grad_ref(qi);
                     const std::size_t m = qv.cols();
                     for (std::size_t r = 0; r < qv.rows(); ++r) {
                       for (std::size_t j = 0; j < m; ++j) {
                         const double level =
                             (2.0 * static_cast<double>(j) + 1.0) / (2.0 * static_cast<double>(m));
                         const double u = y[r] - qv(r, j);
                         const double dhuber = std::abs(u) <= kappa ? u : kappa * (u > 0 ? 1.0 : -1.0);
                         const double w = std::abs(level - (u < 0.0 ? 1.0 : 0.0));
                         // d/dq of huber(y - q) is -dhuber
                         gq(r, j) += g * w * (-dhuber) / kappa / denom;
                       }
                     }
                   });
}

}  // namespace ad
}  // namespace cgpo
