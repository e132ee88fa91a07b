#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace mixseq::ad {

using Real = double;
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
};

// Ordered, value-semantic collection of named parameters.
class ParameterStore {
 public:
  std::size_t add(std::string name, Matrix value);

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  std::size_t size() const { return params_.size(); }
  std::span<Parameter> all() { return params_; }
  std::span<const Parameter> all() const { return params_; }
  const Parameter* find(std::string_view name) const;

  void zero_grad();
  std::size_t scalar_count() const;

  bool operator==(const ParameterStore& other) const;

 private:
  std::vector<Parameter> params_;
};

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Graph* graph() const { return graph_; }
  int id() const { return id_; }

 private:
  friend class Graph;
  Var(Graph* g, int id) : graph_(g), id_(id) {}
  Graph* graph_ = nullptr;
  int id_ = -1;
};

// Reverse-mode tape. Nodes are appended in evaluation order, so a reverse
// sweep visits every consumer before its inputs.
class Graph {
 public:
  using Backward = std::function<void(Graph&, const Matrix& grad_out)>;

  // With record_gradients = false no backward closures are kept.
  explicit Graph(bool record_gradients = true) : record_(record_gradients) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Matrix value);
  // Leaf bound to store[index]; the graph reads the value in place.
  Var parameter(const ParameterStore& store, std::size_t index);

  // Creates a node computed from `inputs`. `backward` receives this node's
  // upstream gradient and accumulates into the inputs via accumulate().
  Var make(Matrix value, std::span<const Var> inputs, Backward backward);
  Var make(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
    return make(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
  }

  const Matrix& value(Var v) const;
  bool requires_grad(Var v) const;
  void accumulate(Var v, const Matrix& g);
  template <typename Expr>
  void accumulate_block(Var v, Eigen::Index row, Eigen::Index col, const Expr& g) {
    auto& n = node(v);
    if (!n.requires_grad) return;
    ensure_grad(n);
    n.grad.block(row, col, g.rows(), g.cols()) += g;
  }
  // Gradient of a node after backward(); empty when none reached it.
  const Matrix& grad(Var v) const;

  // Seeds d(loss)/d(loss) = 1 for a 1x1 loss and sweeps the tape. May be
  // called once per graph.
  void backward(Var loss);
  // Adds parameter-leaf gradients into store[i].grad.
  void collect_gradients(ParameterStore& store) const;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    const Matrix* external = nullptr;
    Matrix grad;
    Backward backward;
    bool requires_grad = false;
    long param_index = -1;
    const ParameterStore* store = nullptr;
  };
  Node& node(Var v);
  const Node& node(Var v) const;
  static void ensure_grad(Node& n);

  std::deque<Node> nodes_;
  bool record_;
};

// ---- operators ------------------------------------------------------------

Var matmul(Var a, Var b);
// x W + b, with b a 1 x out row broadcast over rows.
Var linear(Var x, Var weight, Var bias);
Var add(Var a, Var b);
Var scale(Var a, Real s);
// Adds `tile` (T x C) to every consecutive block of T rows of x.
Var add_tiled(Var x, Var tile);
// [a; b] stacked by rows.
Var vconcat(Var a, Var b);
// out.row(r) = x.row(index[r]). Backward scatters with accumulation.
Var gather_rows(Var x, std::vector<int> index);
Var layer_norm(Var x, Var gain, Var bias, Real eps);
Var gelu(Var x);
// Scalar GELU (tanh approximation), shared by the graph and inference paths.
Real gelu_value(Real v);
// Multi-head self-attention over `batch` independent blocks of `seq` rows.
// qkv holds [Q | K | V] column blocks of width D each; output is batch*seq x D.
Var self_attention(Var qkv, int batch, int seq, int heads);
// Identity forward; backward multiplies the upstream gradient by -lambda.
Var gradient_reversal(Var x, Real lambda);
// sum_r weight[r] * CE(softmax(logits.row(r)), target[r]); rows with a
// negative target are skipped. Returns a 1x1 node.
Var softmax_cross_entropy(Var logits, std::vector<int> target, std::vector<Real> weight);
// Sum of 1x1 nodes.
Var sum_scalars(std::span<const Var> terms);

// Row-wise softmax of a plain matrix (no graph); rows are batch-independent.
Matrix softmax_rows(const Matrix& logits);
Matrix log_softmax_rows(const Matrix& logits);

}  // namespace mixseq::ad
