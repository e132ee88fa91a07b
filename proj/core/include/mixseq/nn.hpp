#pragma once

#include <span>
#include <string>
#include <vector>

#include "mixseq/autodiff.hpp"
#include "mixseq/rng.hpp"

namespace mixseq::nn {

using ad::Graph;
using ad::Matrix;
using ad::ParameterStore;
using ad::Var;

Matrix normal_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double std);
// Glorot-normal: std = sqrt(2 / (fan_in + fan_out)).
Matrix glorot_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols);

// out = x * w + bias (or out += ... with `accumulate`). Each output row is
// computed by the same fixed sequence of operations, so a row's value does
// not depend on the other rows of the batch.
void affine_rows(const Matrix& x, const Matrix& w, const Matrix& bias, Matrix& out, bool accumulate = false);

struct Linear {
  std::size_t weight = 0;  // in x out
  std::size_t bias = 0;    // 1 x out

  static Linear glorot(ParameterStore& store, const std::string& name, int in, int out, Rng& rng);
  static Linear scaled(ParameterStore& store, const std::string& name, int in, int out, Rng& rng,
                       double std);
  Var operator()(Graph& g, const ParameterStore& store, Var x) const;
};

struct LayerNorm {
  std::size_t gain = 0;
  std::size_t bias = 0;
  double eps = 1e-5;

  static LayerNorm create(ParameterStore& store, const std::string& name, int dim, double eps);
  Var operator()(Graph& g, const ParameterStore& store, Var x) const;
};

// Pre-norm block: x + Attn(LN(x)), then x + FF(LN(x)) with a GELU MLP.
struct EncoderLayer {
  LayerNorm attn_norm;
  Linear qkv;
  Linear attn_out;
  LayerNorm ff_norm;
  Linear ff_in;
  Linear ff_out;
};

struct EncoderShape {
  int dim = 64;
  int layers = 2;
  int heads = 4;
  int ff_dim = 256;
  double eps = 1e-5;
};

class TransformerEncoder {
 public:
  TransformerEncoder() = default;
  TransformerEncoder(ParameterStore& store, const std::string& prefix, const EncoderShape& shape, Rng& rng);

  // x is batch*seq x dim; attention stays within each block of seq rows.
  Var operator()(Graph& g, const ParameterStore& store, Var x, int batch, int seq) const;
  // Same computation without a tape, for frozen models. With `query` (one
  // position per sequence) only those rows are returned, batch x dim.
  // Rows are batch-independent; identical input rows share one first-layer
  // projection.
  Matrix infer(const ParameterStore& store, Matrix x, int batch, int seq, std::span<const int> query = {}) const;
  const EncoderShape& shape() const { return shape_; }

 private:
  EncoderShape shape_;
  std::vector<EncoderLayer> layers_;
  LayerNorm final_norm_;
};

// Plain SGD with optional momentum and L2 decay.
class Sgd {
 public:
  Sgd(double learning_rate, double momentum = 0.0, double weight_decay = 0.0)
      : lr_(learning_rate), momentum_(momentum), decay_(weight_decay) {}
  void step(ParameterStore& store);

 private:
  double lr_;
  double momentum_;
  double decay_;
  std::vector<Matrix> velocity_;
};

class Adam {
 public:
  Adam(double learning_rate, double beta1, double beta2, double eps)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(ParameterStore& store);

 private:
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  long t_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

}  // namespace mixseq::nn
