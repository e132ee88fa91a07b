#include "mixseq/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mixseq/error.hpp"

namespace mixseq::nn {

Matrix normal_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double std) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std * rng.normal();
  return m;
}

Matrix glorot_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  return normal_matrix(rng, rows, cols, std::sqrt(2.0 / static_cast<double>(rows + cols)));
}

Linear Linear::glorot(ParameterStore& store, const std::string& name, int in, int out, Rng& rng) {
  Linear l;
  l.weight = store.add(name + ".weight", glorot_matrix(rng, in, out));
  l.bias = store.add(name + ".bias", Matrix::Zero(1, out));
  return l;
}

Linear Linear::scaled(ParameterStore& store, const std::string& name, int in, int out, Rng& rng,
                      double std) {
  Linear l;
  l.weight = store.add(name + ".weight", normal_matrix(rng, in, out, std));
  l.bias = store.add(name + ".bias", Matrix::Zero(1, out));
  return l;
}

Var Linear::operator()(Graph& g, const ParameterStore& store, Var x) const {
  return ad::linear(x, g.parameter(store, weight), g.parameter(store, bias));
}

LayerNorm LayerNorm::create(ParameterStore& store, const std::string& name, int dim, double eps) {
  LayerNorm n;
  n.gain = store.add(name + ".gain", Matrix::Ones(1, dim));
  n.bias = store.add(name + ".bias", Matrix::Zero(1, dim));
  n.eps = eps;
  return n;
}

Var LayerNorm::operator()(Graph& g, const ParameterStore& store, Var x) const {
  return ad::layer_norm(x, g.parameter(store, gain), g.parameter(store, bias), eps);
}

TransformerEncoder::TransformerEncoder(ParameterStore& store, const std::string& prefix,
                                       const EncoderShape& shape, Rng& rng)
    : shape_(shape) {
  for (int l = 0; l < shape.layers; ++l) {
    const std::string p = prefix + ".layer" + std::to_string(l);
    EncoderLayer layer;
    layer.attn_norm = LayerNorm::create(store, p + ".attn_norm", shape.dim, shape.eps);
    layer.qkv = Linear::glorot(store, p + ".qkv", shape.dim, 3 * shape.dim, rng);
    layer.attn_out = Linear::glorot(store, p + ".attn_out", shape.dim, shape.dim, rng);
    layer.ff_norm = LayerNorm::create(store, p + ".ff_norm", shape.dim, shape.eps);
    layer.ff_in = Linear::glorot(store, p + ".ff_in", shape.dim, shape.ff_dim, rng);
    layer.ff_out = Linear::glorot(store, p + ".ff_out", shape.ff_dim, shape.dim, rng);
    layers_.push_back(layer);
  }
  final_norm_ = LayerNorm::create(store, prefix + ".final_norm", shape.dim, shape.eps);
}

Var TransformerEncoder::operator()(Graph& g, const ParameterStore& store, Var x, int batch,
                                   int seq) const {
  for (const auto& layer : layers_) {
    Var h = layer.attn_norm(g, store, x);
    h = ad::self_attention(layer.qkv(g, store, h), batch, seq, shape_.heads);
    x = ad::add(x, layer.attn_out(g, store, h));
    h = layer.ff_norm(g, store, x);
    h = layer.ff_out(g, store, ad::gelu(layer.ff_in(g, store, h)));
    x = ad::add(x, h);
  }
  return final_norm_(g, store, x);
}

void affine_rows(const Matrix& x, const Matrix& w, const Matrix& bias, Matrix& out, bool accumulate) {
  const Eigen::Index K = x.cols();
  const Eigen::Index C = w.cols();
  if (w.rows() != K || bias.cols() != C) throw Error("affine_rows: shape mismatch");
  if (accumulate) {
    if (out.rows() != x.rows() || out.cols() != C) throw Error("affine_rows: accumulator shape mismatch");
  } else {
    out.resize(x.rows(), C);
  }
  std::vector<double> acc(static_cast<std::size_t>(C));
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double* in = x.data() + r * K;
    double* __restrict a = acc.data();
    std::fill(acc.begin(), acc.end(), 0.0);
    for (Eigen::Index k = 0; k < K; ++k) {
      const double v = in[k];
      const double* __restrict wk = w.data() + k * C;
      for (Eigen::Index c = 0; c < C; ++c) a[c] += v * wk[c];
    }
    double* __restrict o = out.data() + r * C;
    const double* __restrict b = bias.data();
    if (accumulate) {
      for (Eigen::Index c = 0; c < C; ++c) o[c] += a[c] + b[c];
    } else {
      for (Eigen::Index c = 0; c < C; ++c) o[c] = a[c] + b[c];
    }
  }
}

namespace {

// Sum of f(x[c]) over eight interleaved lanes combined in a fixed order.
template <typename F>
double lane_sum(const double* x, Eigen::Index n, F f) {
  constexpr int kLanes = 8;
  double lane[kLanes] = {};
  Eigen::Index c = 0;
  for (; c + kLanes <= n; c += kLanes) {
    for (int l = 0; l < kLanes; ++l) lane[l] += f(x[c + l]);
  }
  for (int l = 0; c < n; ++c, ++l) lane[l] += f(x[c]);
  return ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7]));
}

void layer_norm_into(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps, Matrix& out) {
  const Eigen::Index C = x.cols();
  out.resize(x.rows(), C);
  const double* g = gain.data();
  const double* b = bias.data();
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double* in = x.data() + r * C;
    double* o = out.data() + r * C;
    const double mean = lane_sum(in, C, [](double v) { return v; }) / static_cast<double>(C);
    const double var =
        lane_sum(in, C, [mean](double v) { return (v - mean) * (v - mean); }) / static_cast<double>(C);
    const double inv_std = 1.0 / std::sqrt(var + eps);
    for (Eigen::Index c = 0; c < C; ++c) o[c] = (in[c] - mean) * inv_std * g[c] + b[c];
  }
}

// Maps each row of x to the first identical row; fills `compact` with the
// distinct rows in order of first appearance.
std::vector<Eigen::Index> distinct_rows(const Matrix& x, Matrix& compact) {
  const auto bytes = static_cast<std::size_t>(x.cols()) * sizeof(double);
  std::unordered_map<std::string_view, Eigen::Index> seen;
  seen.reserve(static_cast<std::size_t>(x.rows()));
  std::vector<Eigen::Index> index(static_cast<std::size_t>(x.rows()));
  std::vector<Eigen::Index> firsts;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const std::string_view key(reinterpret_cast<const char*>(x.data() + r * x.cols()), bytes);
    const auto [it, inserted] = seen.emplace(key, static_cast<Eigen::Index>(firsts.size()));
    if (inserted) firsts.push_back(r);
    index[static_cast<std::size_t>(r)] = it->second;
  }
  compact.resize(static_cast<Eigen::Index>(firsts.size()), x.cols());
  for (std::size_t i = 0; i < firsts.size(); ++i) compact.row(static_cast<Eigen::Index>(i)) = x.row(firsts[i]);
  return index;
}

// Block-diagonal multi-head attention over rows laid out as [Q | K | V].
// With `query`, only row query[b] of each block is computed and written to
// output row b.
void attention_into(const Matrix& qkv, int batch, int seq, int heads, const int* query, Matrix& out) {
  const Eigen::Index D = qkv.cols() / 3;
  const Eigen::Index dh = D / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  out.setZero(query ? batch : qkv.rows(), D);
  std::vector<double> p(static_cast<std::size_t>(seq));
  for (int b = 0; b < batch; ++b) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(b) * seq;
    const int first = query ? query[b] : 0;
    const int last = query ? query[b] + 1 : seq;
    for (int h = 0; h < heads; ++h) {
      const Eigen::Index q0 = h * dh;
      const Eigen::Index k0 = D + h * dh;
      const Eigen::Index v0 = 2 * D + h * dh;
      for (int i = first; i < last; ++i) {
        const double* q = qkv.data() + (r0 + i) * qkv.cols() + q0;
        double m = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < seq; ++j) {
          const double* k = qkv.data() + (r0 + j) * qkv.cols() + k0;
          double dot = 0;
          for (Eigen::Index d = 0; d < dh; ++d) dot += q[d] * k[d];
          p[static_cast<std::size_t>(j)] = dot * inv_sqrt;
          m = std::max(m, p[static_cast<std::size_t>(j)]);
        }
        double sum = 0;
        for (int j = 0; j < seq; ++j) {
          p[static_cast<std::size_t>(j)] = std::exp(p[static_cast<std::size_t>(j)] - m);
          sum += p[static_cast<std::size_t>(j)];
        }
        const Eigen::Index orow = query ? b : r0 + i;
        double* o = out.data() + orow * D + q0;
        for (int j = 0; j < seq; ++j) {
          const double wj = p[static_cast<std::size_t>(j)] / sum;
          const double* v = qkv.data() + (r0 + j) * qkv.cols() + v0;
          for (Eigen::Index d = 0; d < dh; ++d) o[d] += wj * v[d];
        }
      }
    }
  }
}

}  // namespace

Matrix TransformerEncoder::infer(const ParameterStore& store, Matrix x, int batch, int seq,
                                 std::span<const int> query) const {
  if (!query.empty() && static_cast<int>(query.size()) != batch) {
    throw Error("encoder: one query position per sequence required");
  }
  Matrix h;
  Matrix qkv;
  Matrix att;
  Matrix ff;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    const bool narrow = !query.empty() && l + 1 == layers_.size();
    if (l == 0) {
      Matrix compact;
      const auto index = distinct_rows(x, compact);
      layer_norm_into(compact, store[layer.attn_norm.gain].value, store[layer.attn_norm.bias].value,
                      layer.attn_norm.eps, h);
      Matrix projected;
      affine_rows(h, store[layer.qkv.weight].value, store[layer.qkv.bias].value, projected);
      qkv.resize(x.rows(), projected.cols());
      for (Eigen::Index r = 0; r < x.rows(); ++r) qkv.row(r) = projected.row(index[static_cast<std::size_t>(r)]);
    } else {
      layer_norm_into(x, store[layer.attn_norm.gain].value, store[layer.attn_norm.bias].value, layer.attn_norm.eps, h);
      affine_rows(h, store[layer.qkv.weight].value, store[layer.qkv.bias].value, qkv);
    }
    attention_into(qkv, batch, seq, shape_.heads, narrow ? query.data() : nullptr, att);
    if (narrow) {
      Matrix picked(batch, x.cols());
      for (int b = 0; b < batch; ++b) {
        picked.row(b) = x.row(static_cast<Eigen::Index>(b) * seq + query[static_cast<std::size_t>(b)]);
      }
      x = std::move(picked);
    }
    affine_rows(att, store[layer.attn_out.weight].value, store[layer.attn_out.bias].value, x, true);
    layer_norm_into(x, store[layer.ff_norm.gain].value, store[layer.ff_norm.bias].value, layer.ff_norm.eps, h);
    affine_rows(h, store[layer.ff_in.weight].value, store[layer.ff_in.bias].value, ff);
    ff = ff.unaryExpr(&ad::gelu_value);
    affine_rows(ff, store[layer.ff_out.weight].value, store[layer.ff_out.bias].value, x, true);
  }
  if (layers_.empty() && !query.empty()) {
    Matrix picked(batch, x.cols());
    for (int b = 0; b < batch; ++b) {
      picked.row(b) = x.row(static_cast<Eigen::Index>(b) * seq + query[static_cast<std::size_t>(b)]);
    }
    x = std::move(picked);
  }
  Matrix out;
  layer_norm_into(x, store[final_norm_.gain].value, store[final_norm_.bias].value, final_norm_.eps, out);
  return out;
}

void Sgd::step(ParameterStore& store) {
  if (momentum_ > 0 && velocity_.size() != store.size()) {
    velocity_.clear();
    for (const auto& p : store.all()) velocity_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store[i];
    if (decay_ > 0) p.grad += decay_ * p.value;
    if (momentum_ > 0) {
      velocity_[i] = momentum_ * velocity_[i] + p.grad;
      p.value -= lr_ * velocity_[i];
    } else {
      p.value -= lr_ * p.grad;
    }
  }
}

void Adam::step(ParameterStore& store) {
  if (m_.size() != store.size()) {
    m_.clear();
    v_.clear();
    for (const auto& p : store.all()) {
      m_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

}  // namespace mixseq::nn
