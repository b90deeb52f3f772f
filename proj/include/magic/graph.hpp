#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "magic/array.hpp"

namespace magic {

// Node kinds of the reverse-mode tape.
enum class Op : uint8_t {
  input,
  param,
  constant,
  matmul,            // a[..., M, K] x b; b is a 2-D weight or batched like a
  add,               // broadcasting add (b right-aligned against a)
  mul,               // elementwise, equal shapes
  scale,             // x * c
  gelu,              // exact Gaussian-CDF form x * Phi(x)
  softmax,           // last axis
  layer_norm,        // x, gain, bias over the last axis
  depthwise_conv1d,  // x[B,L,C], w[k,C], bias[C]; zero "same" padding
  embedding,         // table[V,D] gathered by ids -> [B,L,D]
  permute,           // transpose by axes
  reshape,
  mse,               // mean squared error -> scalar
  cross_entropy,     // weighted masked softmax cross entropy -> scalar
};

const char* op_name(Op op);

struct NodeId {
  int v = -1;
  bool valid() const { return v >= 0; }
};

// Reverse-mode autodiff tape over double tensors. Nodes are appended in
// topological order; forward() evaluates the whole tape, backward() seeds the
// chosen scalar loss with 1 and accumulates gradients into every reachable
// node. Parameters not reachable from the loss report zero gradients.
class Graph {
 public:
  // --- leaves -------------------------------------------------------------
  NodeId input(const std::string& name, Shape shape);
  NodeId param(const std::string& name, Array value);
  NodeId constant(Array value);

  // --- primitives ----------------------------------------------------------
  NodeId matmul(NodeId a, NodeId b, bool transpose_b = false);
  NodeId add(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId x, double c);
  NodeId gelu(NodeId x);
  NodeId softmax(NodeId x);
  NodeId layer_norm(NodeId x, NodeId gain, NodeId bias, double eps = 1e-5);
  NodeId depthwise_conv1d(NodeId x, NodeId w, NodeId bias);
  NodeId embedding(NodeId table, const std::vector<int>& ids, int batch, int seq);
  NodeId permute(NodeId x, std::vector<int> axes);
  NodeId reshape(NodeId x, Shape dims);
  NodeId mse(NodeId a, NodeId b);
  // logits [..., V] against flattened targets; weights gate and weigh each
  // position, loss = sum_i w_i * nll_i / sum_i w_i. Rows with w_i == 0 are
  // skipped entirely (their target may be any value).
  NodeId cross_entropy(NodeId logits, std::vector<int> targets, std::vector<double> weights);

  // --- composites ----------------------------------------------------------
  NodeId linear(NodeId x, NodeId w, NodeId b);  // x @ w + b
  NodeId pointwise_conv1d(NodeId x, NodeId w, NodeId b) { return linear(x, w, b); }

  // --- execution -----------------------------------------------------------
  void bind(const std::string& name, Array value);
  void forward();
  void backward(NodeId loss);

  const Array& value(NodeId id) const;
  const Array& grad(NodeId id) const;  // zeros when the node is unreachable
  double scalar_value(NodeId id) const { return value(id).item(); }

  // Gradient per parameter, keyed by name (unreachable params map to zeros).
  std::map<std::string, Array> param_grads() const;
  std::vector<std::string> param_names() const;

  bool has_param(const std::string& name) const;
  NodeId param_node(const std::string& name) const;
  Array& param_value(const std::string& name);
  const Array& param_value(const std::string& name) const;

  const Shape& shape_of(NodeId id) const;
  int node_count() const { return static_cast<int>(nodes_.size()); }

  // Forward-pass finite checks (on by default; each derived node is scanned
  // and a GraphError raised on NaN/Inf).
  void set_check_finite(bool on) { check_finite_ = on; }

 private:
  struct Node {
    Op op = Op::input;
    std::array<int, 3> in{{-1, -1, -1}};
    int n_in = 0;
    Shape shape;
    Array value;
    Array grad;
    bool has_grad = false;
    bool needs_value = false;  // set once bound / computed
    double c = 0.0;            // scale factor or layer_norm eps or CE weight sum
    bool transpose_b = false;
    std::vector<int> axes;
    std::vector<int> ids;
    std::vector<double> weights;
    Array aux;   // op-specific forward cache
    Array aux2;  // second cache (layer_norm inv-std)
    std::string name;
  };

  NodeId push(Node n);
  Node& at(NodeId id);
  const Node& at(NodeId id) const;
  Array& grad_buf(int i);

  void eval(Node& n);
  void accumulate(int idx);

  std::vector<Node> nodes_;
  std::map<std::string, int> params_;
  std::map<std::string, int> inputs_;
  bool check_finite_ = true;
  bool forwarded_ = false;
};

// Central finite differences on every parameter scalar of `g` against the
// analytic gradient of `loss`; returns the worst relative error. Intended for
// tests; cost is O(#params) forward passes.
double grad_check(Graph& g, NodeId loss, double fd_step = 1e-5);

// |a-b| / max(|a|, |b|, floor)
double relative_error(double a, double b, double floor = 1e-8);

}  // namespace magic
