#include "mixseq/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "mixseq/error.hpp"

namespace mixseq::ad {

// ---- ParameterStore -------------------------------------------------------

std::size_t ParameterStore::add(std::string name, Matrix value) {
  Parameter p;
  p.name = std::move(name);
  p.grad = Matrix::Zero(value.rows(), value.cols());
  p.value = std::move(value);
  params_.push_back(std::move(p));
  return params_.size() - 1;
}

const Parameter* ParameterStore::find(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.grad.setZero();
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

bool ParameterStore::operator==(const ParameterStore& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& a = params_[i];
    const auto& b = other.params_[i];
    if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols() ||
        a.value != b.value) {
      return false;
    }
  }
  return true;
}

// ---- Graph ----------------------------------------------------------------

const Matrix& Var::value() const { return graph_->value(*this); }

Graph::Node& Graph::node(Var v) {
  if (v.graph_ != this || v.id_ < 0 || static_cast<std::size_t>(v.id_) >= nodes_.size()) {
    throw Error("autodiff: variable does not belong to this graph");
  }
  return nodes_[static_cast<std::size_t>(v.id_)];
}

const Graph::Node& Graph::node(Var v) const {
  return const_cast<Graph*>(this)->node(v);
}

void Graph::ensure_grad(Node& n) {
  if (n.grad.size() == 0) {
    const Matrix& v = n.external ? *n.external : n.value;
    n.grad = Matrix::Zero(v.rows(), v.cols());
  }
}

Var Graph::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Graph::parameter(const ParameterStore& store, std::size_t index) {
  Node n;
  n.external = &store[index].value;
  n.requires_grad = record_;
  n.param_index = static_cast<long>(index);
  n.store = &store;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Graph::make(Matrix value, std::span<const Var> inputs, Backward backward) {
  Node n;
  n.value = std::move(value);
  if (record_) {
    for (const auto& in : inputs) {
      if (node(in).requires_grad) {
        n.requires_grad = true;
        break;
      }
    }
    if (n.requires_grad) n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

const Matrix& Graph::value(Var v) const {
  const auto& n = node(v);
  return n.external ? *n.external : n.value;
}

bool Graph::requires_grad(Var v) const { return node(v).requires_grad; }

void Graph::accumulate(Var v, const Matrix& g) {
  auto& n = node(v);
  if (!n.requires_grad) return;
  ensure_grad(n);
  n.grad += g;
}

const Matrix& Graph::grad(Var v) const { return node(v).grad; }

void Graph::backward(Var loss) {
  auto& root = node(loss);
  if (root.value.rows() != 1 || root.value.cols() != 1) {
    throw Error("autodiff: backward() needs a 1x1 loss");
  }
  if (!root.requires_grad) return;
  ensure_grad(root);
  root.grad(0, 0) += 1.0;
  for (int id = loss.id_; id >= 0; --id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (n.backward && n.grad.size() > 0) n.backward(*this, n.grad);
  }
}

void Graph::collect_gradients(ParameterStore& store) const {
  for (const auto& n : nodes_) {
    if (n.param_index < 0 || n.store != &store || n.grad.size() == 0) continue;
    store[static_cast<std::size_t>(n.param_index)].grad += n.grad;
  }
}

// ---- operators ------------------------------------------------------------

namespace {

void require_same_graph(Var a, Var b) {
  if (a.graph() != b.graph()) throw Error("autodiff: operands from different graphs");
}

void require_shape(bool ok, const char* op, const std::string& detail) {
  if (!ok) throw DataError(std::string("autodiff ") + op + ": shape mismatch " + detail);
}

std::string dims(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_graph(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  require_shape(A.cols() == B.rows(), "matmul", dims(A) + " * " + dims(B));
  Graph& g = *a.graph();
  return g.make(A * B, {a, b}, [a, b](Graph& g, const Matrix& d) {
    if (g.requires_grad(a)) g.accumulate(a, d * g.value(b).transpose());
    if (g.requires_grad(b)) g.accumulate(b, g.value(a).transpose() * d);
  });
}

Var linear(Var x, Var weight, Var bias) {
  require_same_graph(x, weight);
  require_same_graph(x, bias);
  const auto& X = x.value();
  const auto& W = weight.value();
  const auto& b = bias.value();
  require_shape(X.cols() == W.rows() && b.rows() == 1 && b.cols() == W.cols(), "linear",
                dims(X) + " * " + dims(W) + " + " + dims(b));
  Matrix y = X * W;
  y.rowwise() += b.row(0);
  Graph& g = *x.graph();
  return g.make(std::move(y), {x, weight, bias}, [x, weight, bias](Graph& g, const Matrix& d) {
    if (g.requires_grad(x)) g.accumulate(x, d * g.value(weight).transpose());
    if (g.requires_grad(weight)) g.accumulate(weight, g.value(x).transpose() * d);
    if (g.requires_grad(bias)) g.accumulate(bias, d.colwise().sum());
  });
}

Var add(Var a, Var b) {
  require_same_graph(a, b);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add",
                dims(a.value()) + " + " + dims(b.value()));
  Graph& g = *a.graph();
  return g.make(a.value() + b.value(), {a, b}, [a, b](Graph& g, const Matrix& d) {
    g.accumulate(a, d);
    g.accumulate(b, d);
  });
}

Var scale(Var a, Real s) {
  Graph& g = *a.graph();
  return g.make(a.value() * s, {a}, [a, s](Graph& g, const Matrix& d) { g.accumulate(a, d * s); });
}

Var add_tiled(Var x, Var tile) {
  require_same_graph(x, tile);
  const auto& X = x.value();
  const auto& T = tile.value();
  require_shape(T.rows() > 0 && X.rows() % T.rows() == 0 && X.cols() == T.cols(), "add_tiled",
                dims(X) + " + tile " + dims(T));
  const Eigen::Index period = T.rows();
  const Eigen::Index blocks = X.rows() / period;
  Matrix y = X;
  for (Eigen::Index b = 0; b < blocks; ++b) y.middleRows(b * period, period) += T;
  Graph& g = *x.graph();
  return g.make(std::move(y), {x, tile}, [x, tile, period, blocks](Graph& g, const Matrix& d) {
    g.accumulate(x, d);
    if (g.requires_grad(tile)) {
      Matrix acc = Matrix::Zero(period, d.cols());
      for (Eigen::Index b = 0; b < blocks; ++b) acc += d.middleRows(b * period, period);
      g.accumulate(tile, acc);
    }
  });
}

Var vconcat(Var a, Var b) {
  require_same_graph(a, b);
  require_shape(a.cols() == b.cols(), "vconcat", dims(a.value()) + " ; " + dims(b.value()));
  Matrix y(a.rows() + b.rows(), a.cols());
  y.topRows(a.rows()) = a.value();
  y.bottomRows(b.rows()) = b.value();
  const Eigen::Index top = a.rows();
  Graph& g = *a.graph();
  return g.make(std::move(y), {a, b}, [a, b, top](Graph& g, const Matrix& d) {
    if (g.requires_grad(a)) g.accumulate(a, d.topRows(top));
    if (g.requires_grad(b)) g.accumulate(b, d.bottomRows(d.rows() - top));
  });
}

Var gather_rows(Var x, std::vector<int> index) {
  const auto& X = x.value();
  Matrix y(static_cast<Eigen::Index>(index.size()), X.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    require_shape(index[r] >= 0 && index[r] < X.rows(), "gather_rows",
                  "index " + std::to_string(index[r]) + " of " + dims(X));
    y.row(static_cast<Eigen::Index>(r)) = X.row(index[r]);
  }
  Graph& g = *x.graph();
  return g.make(std::move(y), {x}, [x, index = std::move(index)](Graph& g, const Matrix& d) {
    const auto& X = g.value(x);
    Matrix acc = Matrix::Zero(X.rows(), X.cols());
    for (std::size_t r = 0; r < index.size(); ++r) acc.row(index[r]) += d.row(static_cast<Eigen::Index>(r));
    g.accumulate(x, acc);
  });
}

Var layer_norm(Var x, Var gain, Var bias, Real eps) {
  require_same_graph(x, gain);
  require_same_graph(x, bias);
  const auto& X = x.value();
  const auto& G = gain.value();
  const auto& B = bias.value();
  require_shape(G.rows() == 1 && G.cols() == X.cols() && B.rows() == 1 && B.cols() == X.cols(),
                "layer_norm", dims(X) + " gain " + dims(G));
  const Eigen::Index C = X.cols();
  Matrix xhat(X.rows(), C);
  Eigen::VectorXd inv_std(X.rows());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const Real mean = X.row(r).mean();
    const Real var = (X.row(r).array() - mean).square().mean();
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (X.row(r).array() - mean) * inv_std[r];
  }
  Matrix y = xhat.array().rowwise() * G.row(0).array();
  y.rowwise() += B.row(0);
  Graph& g = *x.graph();
  return g.make(std::move(y), {x, gain, bias},
                [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                    Graph& g, const Matrix& d) {
                  const auto& G = g.value(gain);
                  if (g.requires_grad(gain)) g.accumulate(gain, (d.array() * xhat.array()).colwise().sum());
                  if (g.requires_grad(bias)) g.accumulate(bias, d.colwise().sum());
                  if (!g.requires_grad(x)) return;
                  Matrix dxhat = d.array().rowwise() * G.row(0).array();
                  Matrix dx(d.rows(), d.cols());
                  for (Eigen::Index r = 0; r < d.rows(); ++r) {
                    const Real m1 = dxhat.row(r).mean();
                    const Real m2 = (dxhat.row(r).array() * xhat.row(r).array()).mean();
                    dx.row(r) = inv_std[r] * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
                  }
                  g.accumulate(x, dx);
                });
}

namespace {

constexpr Real kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr Real kGeluK = 0.044715;

Real gelu_gate(Real v) { return 1.0 / (1.0 + std::exp(-2.0 * kGeluC * (v + kGeluK * v * v * v))); }

}  // namespace

Real gelu_value(Real v) { return v * gelu_gate(v); }

Var gelu(Var x) {
  Matrix y = x.value().unaryExpr(&gelu_value);
  Graph& g = *x.graph();
  return g.make(std::move(y), {x}, [x](Graph& g, const Matrix& d) {
    Matrix dx = g.value(x).unaryExpr([](Real v) {
      const Real s = gelu_gate(v);
      return s + v * s * (1.0 - s) * 2.0 * kGeluC * (1.0 + 3.0 * kGeluK * v * v);
    });
    g.accumulate(x, dx.cwiseProduct(d));
  });
}

Var self_attention(Var qkv, int batch, int seq, int heads) {
  const auto& QKV = qkv.value();
  require_shape(QKV.rows() == static_cast<Eigen::Index>(batch) * seq && QKV.cols() % 3 == 0 &&
                    (QKV.cols() / 3) % heads == 0,
                "self_attention", dims(QKV) + " for batch " + std::to_string(batch) + " seq " +
                                      std::to_string(seq) + " heads " + std::to_string(heads));
  const Eigen::Index D = QKV.cols() / 3;
  const Eigen::Index dh = D / heads;
  const Real inv_sqrt = 1.0 / std::sqrt(static_cast<Real>(dh));
  Matrix out(QKV.rows(), D);
  // probs block (b, h) lives at rows (b * heads + h) * seq.
  Matrix probs(static_cast<Eigen::Index>(batch) * heads * seq, seq);
  for (int b = 0; b < batch; ++b) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(b) * seq;
    for (int h = 0; h < heads; ++h) {
      const auto Q = QKV.block(r0, h * dh, seq, dh);
      const auto K = QKV.block(r0, D + h * dh, seq, dh);
      const auto V = QKV.block(r0, 2 * D + h * dh, seq, dh);
      Matrix s = (Q * K.transpose()) * inv_sqrt;
      for (Eigen::Index i = 0; i < seq; ++i) {
        const Real m = s.row(i).maxCoeff();
        s.row(i) = (s.row(i).array() - m).exp();
        s.row(i) /= s.row(i).sum();
      }
      out.block(r0, h * dh, seq, dh) = s * V;
      probs.middleRows((static_cast<Eigen::Index>(b) * heads + h) * seq, seq) = s;
    }
  }
  Graph& g = *qkv.graph();
  return g.make(std::move(out), {qkv},
                [qkv, batch, seq, heads, D, dh, inv_sqrt, probs = std::move(probs)](
                    Graph& g, const Matrix& d) {
                  const auto& QKV = g.value(qkv);
                  Matrix dqkv = Matrix::Zero(QKV.rows(), QKV.cols());
                  for (int b = 0; b < batch; ++b) {
                    const Eigen::Index r0 = static_cast<Eigen::Index>(b) * seq;
                    for (int h = 0; h < heads; ++h) {
                      const auto Q = QKV.block(r0, h * dh, seq, dh);
                      const auto K = QKV.block(r0, D + h * dh, seq, dh);
                      const auto V = QKV.block(r0, 2 * D + h * dh, seq, dh);
                      const auto P = probs.middleRows((static_cast<Eigen::Index>(b) * heads + h) * seq, seq);
                      const auto dO = d.block(r0, h * dh, seq, dh);
                      Matrix dP = dO * V.transpose();
                      dqkv.block(r0, 2 * D + h * dh, seq, dh) += P.transpose() * dO;
                      Eigen::VectorXd rowdot = (dP.array() * P.array()).rowwise().sum();
                      Matrix dS = P.array() * (dP.array().colwise() - rowdot.array());
                      dqkv.block(r0, h * dh, seq, dh) += (dS * K) * inv_sqrt;
                      dqkv.block(r0, D + h * dh, seq, dh) += (dS.transpose() * Q) * inv_sqrt;
                    }
                  }
                  g.accumulate(qkv, dqkv);
                });
}

Var gradient_reversal(Var x, Real lambda) {
  Graph& g = *x.graph();
  return g.make(x.value(), {x}, [x, lambda](Graph& g, const Matrix& d) {
    if (lambda == 0.0) {
      g.accumulate(x, Matrix::Zero(d.rows(), d.cols()));
    } else {
      g.accumulate(x, -lambda * d);
    }
  });
}

Var softmax_cross_entropy(Var logits, std::vector<int> target, std::vector<Real> weight) {
  const auto& Z = logits.value();
  require_shape(static_cast<Eigen::Index>(target.size()) == Z.rows() && weight.size() == target.size(),
                "softmax_cross_entropy", dims(Z) + " with " + std::to_string(target.size()) + " targets");
  Matrix logp = log_softmax_rows(Z);
  Real loss = 0;
  for (std::size_t r = 0; r < target.size(); ++r) {
    if (target[r] < 0) continue;
    require_shape(target[r] < Z.cols(), "softmax_cross_entropy",
                  "target " + std::to_string(target[r]) + " >= " + std::to_string(Z.cols()));
    loss -= weight[r] * logp(static_cast<Eigen::Index>(r), target[r]);
  }
  Matrix value(1, 1);
  value(0, 0) = loss;
  Graph& g = *logits.graph();
  return g.make(std::move(value), {logits},
                [logits, target = std::move(target), weight = std::move(weight),
                 logp = std::move(logp)](Graph& g, const Matrix& d) {
                  Matrix dz = Matrix::Zero(logp.rows(), logp.cols());
                  for (std::size_t r = 0; r < target.size(); ++r) {
                    if (target[r] < 0) continue;
                    const auto row = static_cast<Eigen::Index>(r);
                    dz.row(row) = logp.row(row).array().exp() * (weight[r] * d(0, 0));
                    dz(row, target[r]) -= weight[r] * d(0, 0);
                  }
                  g.accumulate(logits, dz);
                });
}

Var sum_scalars(std::span<const Var> terms) {
  if (terms.empty()) throw Error("autodiff: sum of no terms");
  Graph& g = *terms.front().graph();
  Matrix value = Matrix::Zero(1, 1);
  for (const auto& t : terms) {
    require_shape(t.rows() == 1 && t.cols() == 1, "sum_scalars", dims(t.value()));
    value(0, 0) += t.value()(0, 0);
  }
  std::vector<Var> captured(terms.begin(), terms.end());
  return g.make(std::move(value), terms, [captured = std::move(captured)](Graph& g, const Matrix& d) {
    for (const auto& t : captured) g.accumulate(t, d);
  });
}

Matrix log_softmax_rows(const Matrix& logits) {
  const Eigen::Index C = logits.cols();
  Matrix out(logits.rows(), C);
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const Real* z = logits.data() + r * C;
    Real m = -std::numeric_limits<Real>::infinity();
    for (Eigen::Index c = 0; c < C; ++c) m = std::max(m, z[c]);
    Real sum = 0;
    for (Eigen::Index c = 0; c < C; ++c) sum += std::exp(z[c] - m);
    const Real lse = m + std::log(sum);
    Real* o = out.data() + r * C;
    for (Eigen::Index c = 0; c < C; ++c) o[c] = z[c] - lse;
  }
  return out;
}

Matrix softmax_rows(const Matrix& logits) {
  return log_softmax_rows(logits).unaryExpr([](Real v) { return std::exp(v); });
}

}  // namespace mixseq::ad
