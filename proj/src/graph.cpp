#include "magic/graph.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <deque>

#include "magic/error.hpp"

namespace magic {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<EMat>;
using CMap = Eigen::Map<const EMat>;

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

int last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

int64_t row_count(const Shape& s) {
  int64_t n = numel(s);
  int v = last_dim(s);
  return v == 0 ? 0 : n / v;
}

std::array<int64_t, 8> strides_of(const Shape& s) {
  MAGIC_GRAPH_CHECK(s.size() <= 8, "tensor rank ", s.size(), " exceeds 8");
  std::array<int64_t, 8> st;
  if (s.empty()) return st;
  st[s.size() - 1] = 1;
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
    st[static_cast<size_t>(i)] = st[static_cast<size_t>(i) + 1] * s[static_cast<size_t>(i) + 1];
  return st;
}

// Eigen's blocked GEMM pipeline costs more than it saves on the tiny
// per-head attention products; evaluate those coefficient-wise instead.
constexpr int64_t kLazyProductFlops = 1 << 15;

template <class Dst, class L, class R>
void set_product(Dst dst, const L& l, const R& r) {
  if (l.rows() * l.cols() * r.cols() <= kLazyProductFlops)
    dst.noalias() = l.lazyProduct(r);
  else
    dst.noalias() = l * r;
}

template <class Dst, class L, class R>
void add_product(Dst dst, const L& l, const R& r) {
  if (l.rows() * l.cols() * r.cols() <= kLazyProductFlops)
    dst.noalias() += l.lazyProduct(r);
  else
    dst.noalias() += l * r;
}

void ensure(Array& a, const Shape& s) {
  // default-constructed Array has scalar shape but no storage
  if (a.shape != s || a.data.size() != static_cast<size_t>(numel(s))) a = Array(s);
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::input: return "input";
    case Op::param: return "param";
    case Op::constant: return "constant";
    case Op::matmul: return "matmul";
    case Op::add: return "add";
    case Op::mul: return "mul";
    case Op::scale: return "scale";
    case Op::gelu: return "gelu";
    case Op::softmax: return "softmax";
    case Op::layer_norm: return "layer_norm";
    case Op::depthwise_conv1d: return "depthwise_conv1d";
    case Op::embedding: return "embedding";
    case Op::permute: return "permute";
    case Op::reshape: return "reshape";
    case Op::mse: return "mse";
    case Op::cross_entropy: return "cross_entropy";
  }
  return "?";
}

NodeId Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  forwarded_ = false;
  return NodeId{static_cast<int>(nodes_.size()) - 1};
}

Graph::Node& Graph::at(NodeId id) {
  MAGIC_GRAPH_CHECK(id.v >= 0 && id.v < static_cast<int>(nodes_.size()), "bad node id ", id.v);
  return nodes_[static_cast<size_t>(id.v)];
}

const Graph::Node& Graph::at(NodeId id) const {
  MAGIC_GRAPH_CHECK(id.v >= 0 && id.v < static_cast<int>(nodes_.size()), "bad node id ", id.v);
  return nodes_[static_cast<size_t>(id.v)];
}

NodeId Graph::input(const std::string& name, Shape shape) {
  MAGIC_GRAPH_CHECK(!inputs_.count(name), "duplicate input '", name, "'");
  Node n;
  n.op = Op::input;
  n.shape = std::move(shape);
  n.name = name;
  NodeId id = push(std::move(n));
  inputs_[name] = id.v;
  return id;
}

NodeId Graph::param(const std::string& name, Array value) {
  MAGIC_GRAPH_CHECK(!params_.count(name), "duplicate param '", name, "'");
  MAGIC_GRAPH_CHECK(value.all_finite(), "param '", name, "' has non-finite values");
  Node n;
  n.op = Op::param;
  n.shape = value.shape;
  n.value = std::move(value);
  n.needs_value = true;
  n.name = name;
  NodeId id = push(std::move(n));
  params_[name] = id.v;
  return id;
}

NodeId Graph::constant(Array value) {
  Node n;
  n.op = Op::constant;
  n.shape = value.shape;
  n.value = std::move(value);
  n.needs_value = true;
  return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b, bool transpose_b) {
  const Shape& sa = at(a).shape;
  const Shape& sb = at(b).shape;
  MAGIC_GRAPH_CHECK(sa.size() >= 2, "matmul lhs rank must be >= 2, got ", shape_str(sa));
  MAGIC_GRAPH_CHECK(sb.size() == 2 || sb.size() == sa.size(), "matmul rhs rank ", sb.size(),
                    " incompatible with lhs ", shape_str(sa));
  int K = sa.back();
  int bk = transpose_b ? sb.back() : sb[sb.size() - 2];
  int N = transpose_b ? sb[sb.size() - 2] : sb.back();
  MAGIC_GRAPH_CHECK(K == bk, "matmul inner dims differ: ", shape_str(sa), " x ", shape_str(sb),
                    transpose_b ? " (rhs transposed)" : "");
  if (sb.size() > 2)
    for (size_t i = 0; i + 2 < sa.size(); ++i)
      MAGIC_GRAPH_CHECK(sa[i] == sb[i], "matmul batch dims differ: ", shape_str(sa), " x ",
                        shape_str(sb));
  Shape out(sa);
  out.back() = N;
  Node n;
  n.op = Op::matmul;
  n.in = {a.v, b.v, -1};
  n.n_in = 2;
  n.transpose_b = transpose_b;
  n.shape = std::move(out);
  return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
  const Shape& sa = at(a).shape;
  const Shape& sb = at(b).shape;
  MAGIC_GRAPH_CHECK(sb.size() <= sa.size(), "add: rhs rank exceeds lhs: ", shape_str(sa), " + ",
                    shape_str(sb));
  size_t off = sa.size() - sb.size();
  for (size_t i = 0; i < sb.size(); ++i)
    MAGIC_GRAPH_CHECK(sb[i] == 1 || sb[i] == sa[off + i], "add: shapes not broadcastable: ",
                      shape_str(sa), " + ", shape_str(sb));
  Node n;
  n.op = Op::add;
  n.in = {a.v, b.v, -1};
  n.n_in = 2;
  n.shape = sa;
  return push(std::move(n));
}

NodeId Graph::mul(NodeId a, NodeId b) {
  MAGIC_GRAPH_CHECK(at(a).shape == at(b).shape, "mul: shape mismatch ", shape_str(at(a).shape),
                    " vs ", shape_str(at(b).shape));
  Node n;
  n.op = Op::mul;
  n.in = {a.v, b.v, -1};
  n.n_in = 2;
  n.shape = at(a).shape;
  return push(std::move(n));
}

NodeId Graph::scale(NodeId x, double c) {
  Node n;
  n.op = Op::scale;
  n.in = {x.v, -1, -1};
  n.n_in = 1;
  n.c = c;
  n.shape = at(x).shape;
  return push(std::move(n));
}

NodeId Graph::gelu(NodeId x) {
  Node n;
  n.op = Op::gelu;
  n.in = {x.v, -1, -1};
  n.n_in = 1;
  n.shape = at(x).shape;
  return push(std::move(n));
}

NodeId Graph::softmax(NodeId x) {
  MAGIC_GRAPH_CHECK(!at(x).shape.empty(), "softmax needs rank >= 1");
  Node n;
  n.op = Op::softmax;
  n.in = {x.v, -1, -1};
  n.n_in = 1;
  n.shape = at(x).shape;
  return push(std::move(n));
}

NodeId Graph::layer_norm(NodeId x, NodeId gain, NodeId bias, double eps) {
  const Shape& sx = at(x).shape;
  int d = last_dim(sx);
  MAGIC_GRAPH_CHECK(at(gain).shape == Shape{d} && at(bias).shape == Shape{d},
                    "layer_norm: gain/bias must be [", d, "]");
  Node n;
  n.op = Op::layer_norm;
  n.in = {x.v, gain.v, bias.v};
  n.n_in = 3;
  n.c = eps;
  n.shape = sx;
  return push(std::move(n));
}

NodeId Graph::depthwise_conv1d(NodeId x, NodeId w, NodeId bias) {
  const Shape& sx = at(x).shape;
  const Shape& sw = at(w).shape;
  MAGIC_GRAPH_CHECK(sx.size() == 3, "depthwise_conv1d input must be [B,L,C], got ", shape_str(sx));
  MAGIC_GRAPH_CHECK(sw.size() == 2 && sw[1] == sx[2] && sw[0] % 2 == 1,
                    "depthwise_conv1d kernel must be [odd k, ", sx[2], "], got ", shape_str(sw));
  MAGIC_GRAPH_CHECK(at(bias).shape == Shape{sx[2]}, "depthwise_conv1d bias must be [", sx[2], "]");
  Node n;
  n.op = Op::depthwise_conv1d;
  n.in = {x.v, w.v, bias.v};
  n.n_in = 3;
  n.shape = sx;
  return push(std::move(n));
}

NodeId Graph::embedding(NodeId table, const std::vector<int>& ids, int batch, int seq) {
  const Shape& st = at(table).shape;
  MAGIC_GRAPH_CHECK(st.size() == 2, "embedding table must be rank 2, got ", shape_str(st));
  MAGIC_GRAPH_CHECK(static_cast<int64_t>(ids.size()) == static_cast<int64_t>(batch) * seq,
                    "embedding: ids size ", ids.size(), " != ", batch, "*", seq);
  for (int id : ids)
    MAGIC_GRAPH_CHECK(id >= 0 && id < st[0], "embedding id ", id, " out of range [0,", st[0], ")");
  Node n;
  n.op = Op::embedding;
  n.in = {table.v, -1, -1};
  n.n_in = 1;
  n.ids = ids;
  n.shape = {batch, seq, st[1]};
  return push(std::move(n));
}

NodeId Graph::permute(NodeId x, std::vector<int> axes) {
  const Shape& sx = at(x).shape;
  MAGIC_GRAPH_CHECK(axes.size() == sx.size(), "permute axes rank mismatch");
  std::vector<bool> seen(axes.size(), false);
  Shape out(axes.size());
  for (size_t i = 0; i < axes.size(); ++i) {
    int a = axes[i];
    MAGIC_GRAPH_CHECK(a >= 0 && a < static_cast<int>(sx.size()) && !seen[static_cast<size_t>(a)],
                      "permute: invalid axes");
    seen[static_cast<size_t>(a)] = true;
    out[i] = sx[static_cast<size_t>(a)];
  }
  Node n;
  n.op = Op::permute;
  n.in = {x.v, -1, -1};
  n.n_in = 1;
  n.axes = std::move(axes);
  n.shape = std::move(out);
  return push(std::move(n));
}

NodeId Graph::reshape(NodeId x, Shape dims) {
  MAGIC_GRAPH_CHECK(numel(dims) == numel(at(x).shape), "reshape ", shape_str(at(x).shape), " -> ",
                    shape_str(dims), " changes element count");
  Node n;
  n.op = Op::reshape;
  n.in = {x.v, -1, -1};
  n.n_in = 1;
  n.shape = std::move(dims);
  return push(std::move(n));
}

NodeId Graph::mse(NodeId a, NodeId b) {
  MAGIC_GRAPH_CHECK(at(a).shape == at(b).shape, "mse: shape mismatch ", shape_str(at(a).shape),
                    " vs ", shape_str(at(b).shape));
  Node n;
  n.op = Op::mse;
  n.in = {a.v, b.v, -1};
  n.n_in = 2;
  n.shape = {};
  return push(std::move(n));
}

NodeId Graph::cross_entropy(NodeId logits, std::vector<int> targets, std::vector<double> weights) {
  const Shape& s = at(logits).shape;
  MAGIC_GRAPH_CHECK(s.size() >= 1, "cross_entropy needs rank >= 1 logits");
  int V = last_dim(s);
  int64_t M = row_count(s);
  MAGIC_GRAPH_CHECK(static_cast<int64_t>(targets.size()) == M, "cross_entropy: ", targets.size(),
                    " targets for ", M, " rows");
  MAGIC_GRAPH_CHECK(weights.size() == targets.size(), "cross_entropy: weights size mismatch");
  double wsum = 0.0;
  for (size_t i = 0; i < weights.size(); ++i) {
    MAGIC_GRAPH_CHECK(weights[i] >= 0.0, "cross_entropy: negative weight");
    if (weights[i] > 0.0) {
      MAGIC_GRAPH_CHECK(targets[i] >= 0 && targets[i] < V, "cross_entropy: target ", targets[i],
                        " out of range [0,", V, ")");
      wsum += weights[i];
    }
  }
  MAGIC_GRAPH_CHECK(wsum > 0.0, "cross_entropy: all weights zero (nothing to predict)");
  Node n;
  n.op = Op::cross_entropy;
  n.in = {logits.v, -1, -1};
  n.n_in = 1;
  n.ids = std::move(targets);
  n.weights = std::move(weights);
  n.c = wsum;
  n.shape = {};
  return push(std::move(n));
}

NodeId Graph::linear(NodeId x, NodeId w, NodeId b) { return add(matmul(x, w), b); }

void Graph::bind(const std::string& name, Array value) {
  auto it = inputs_.find(name);
  MAGIC_GRAPH_CHECK(it != inputs_.end(), "bind: no input named '", name, "'");
  Node& n = nodes_[static_cast<size_t>(it->second)];
  MAGIC_GRAPH_CHECK(value.shape == n.shape, "bind '", name, "': shape ", shape_str(value.shape),
                    " != declared ", shape_str(n.shape));
  if (check_finite_)
    MAGIC_GRAPH_CHECK(value.all_finite(), "bind '", name, "': non-finite values");
  n.value = std::move(value);
  n.needs_value = true;
  forwarded_ = false;
}

void Graph::forward() {
  for (auto& n : nodes_) {
    switch (n.op) {
      case Op::input:
        MAGIC_GRAPH_CHECK(n.needs_value, "input '", n.name, "' not bound before forward");
        break;
      case Op::param:
      case Op::constant:
        break;
      default:
        eval(n);
        if (check_finite_)
          MAGIC_GRAPH_CHECK(n.value.all_finite(), "non-finite output of ", op_name(n.op), " node");
    }
  }
  forwarded_ = true;
}

void Graph::eval(Node& n) {
  auto& N = nodes_;
  auto val = [&](int i) -> const Array& { return N[static_cast<size_t>(i)].value; };
  switch (n.op) {
    case Op::matmul: {
      const Array& A = val(n.in[0]);
      const Array& B = val(n.in[1]);
      ensure(n.value, n.shape);
      int K = A.shape.back();
      int N_ = n.shape.back();
      if (B.rank() == 2) {
        int64_t R = row_count(A.shape);
        CMap a(A.ptr(), R, K);
        Map c(n.value.ptr(), R, N_);
        if (n.transpose_b) {
          CMap b(B.ptr(), N_, K);
          set_product(c, a, b.transpose());
        } else {
          CMap b(B.ptr(), K, N_);
          set_product(c, a, b);
        }
      } else {
        int M = A.shape[A.shape.size() - 2];
        int64_t batches = numel(A.shape) / (static_cast<int64_t>(M) * K);
        int64_t bstrideA = static_cast<int64_t>(M) * K;
        int64_t bstrideB = static_cast<int64_t>(K) * N_;
        for (int64_t i = 0; i < batches; ++i) {
          CMap a(A.ptr() + i * bstrideA, M, K);
          Map c(n.value.ptr() + i * static_cast<int64_t>(M) * N_, M, N_);
          if (n.transpose_b) {
            CMap b(B.ptr() + i * bstrideB, N_, K);
            set_product(c, a, b.transpose());
          } else {
            CMap b(B.ptr() + i * bstrideB, K, N_);
            set_product(c, a, b);
          }
        }
      }
      break;
    }
    case Op::add: {
      const Array& A = val(n.in[0]);
      const Array& B = val(n.in[1]);
      ensure(n.value, n.shape);
      int64_t total = A.size();
      if (A.shape == B.shape) {
        for (int64_t i = 0; i < total; ++i) n.value.data[i] = A.data[i] + B.data[i];
      } else if (B.rank() == 1 && B.dim(0) == last_dim(A.shape)) {
        int64_t cols = B.dim(0);
        for (int64_t r = 0; r < total / cols; ++r) {
          const double* a = A.ptr() + r * cols;
          double* o = n.value.ptr() + r * cols;
          for (int64_t j = 0; j < cols; ++j) o[j] = a[j] + B.data[static_cast<size_t>(j)];
        }
      } else {
        auto ast = strides_of(A.shape);
        size_t off = A.shape.size() - B.shape.size();
        auto bst = strides_of(B.shape);
        for (int64_t i = 0; i < total; ++i) {
          int64_t rem = i, bi = 0;
          for (size_t d = 0; d < A.shape.size(); ++d) {
            int64_t coord = rem / ast[d];
            rem %= ast[d];
            if (d >= off && B.shape[d - off] != 1) bi += coord * bst[d - off];
          }
          n.value.data[i] = A.data[i] + B.data[static_cast<size_t>(bi)];
        }
      }
      break;
    }
    case Op::mul: {
      const Array& A = val(n.in[0]);
      const Array& B = val(n.in[1]);
      ensure(n.value, n.shape);
      for (int64_t i = 0; i < A.size(); ++i) n.value.data[i] = A.data[i] * B.data[i];
      break;
    }
    case Op::scale: {
      const Array& A = val(n.in[0]);
      ensure(n.value, n.shape);
      for (int64_t i = 0; i < A.size(); ++i) n.value.data[i] = A.data[i] * n.c;
      break;
    }
    case Op::gelu: {
      const Array& A = val(n.in[0]);
      ensure(n.value, n.shape);
      ensure(n.aux, n.shape);  // caches Phi(x) for backward
      for (int64_t i = 0; i < A.size(); ++i) {
        double x = A.data[i];
        double phi = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        n.aux.data[i] = phi;
        n.value.data[i] = x * phi;
      }
      break;
    }
    case Op::softmax: {
      const Array& A = val(n.in[0]);
      ensure(n.value, n.shape);
      int V = last_dim(A.shape);
      int64_t R = row_count(A.shape);
      for (int64_t r = 0; r < R; ++r) {
        const double* x = A.ptr() + r * V;
        double* y = n.value.ptr() + r * V;
        double m = x[0];
        for (int j = 1; j < V; ++j) m = std::max(m, x[j]);
        double s = 0.0;
        for (int j = 0; j < V; ++j) {
          y[j] = std::exp(x[j] - m);
          s += y[j];
        }
        double inv = 1.0 / s;
        for (int j = 0; j < V; ++j) y[j] *= inv;
      }
      break;
    }
    case Op::layer_norm: {
      const Array& X = val(n.in[0]);
      const Array& G = val(n.in[1]);
      const Array& Bb = val(n.in[2]);
      ensure(n.value, n.shape);
      int d = last_dim(X.shape);
      int64_t R = row_count(X.shape);
      ensure(n.aux, X.shape);                      // normalized activations
      ensure(n.aux2, Shape{static_cast<int>(R)});  // per-row inverse stddev
      for (int64_t r = 0; r < R; ++r) {
        const double* x = X.ptr() + r * d;
        double* xhat = n.aux.ptr() + r * d;
        double* y = n.value.ptr() + r * d;
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += x[j];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
          double t = x[j] - mean;
          var += t * t;
        }
        var /= d;
        double inv = 1.0 / std::sqrt(var + n.c);
        n.aux2.data[static_cast<size_t>(r)] = inv;
        for (int j = 0; j < d; ++j) {
          xhat[j] = (x[j] - mean) * inv;
          y[j] = xhat[j] * G.data[static_cast<size_t>(j)] + Bb.data[static_cast<size_t>(j)];
        }
      }
      break;
    }
    case Op::depthwise_conv1d: {
      const Array& X = val(n.in[0]);
      const Array& W = val(n.in[1]);
      const Array& Bb = val(n.in[2]);
      ensure(n.value, n.shape);
      int Bn = X.dim(0), L = X.dim(1), C = X.dim(2), k = W.dim(0);
      int P = k / 2;
      for (int b = 0; b < Bn; ++b) {
        for (int l = 0; l < L; ++l) {
          double* o = n.value.ptr() + (static_cast<int64_t>(b) * L + l) * C;
          for (int c = 0; c < C; ++c) o[c] = Bb.data[static_cast<size_t>(c)];
          int t0 = std::max(0, P - l), t1 = std::min(k, L + P - l);
          for (int t = t0; t < t1; ++t) {
            const double* x = X.ptr() + (static_cast<int64_t>(b) * L + (l + t - P)) * C;
            const double* w = W.ptr() + static_cast<int64_t>(t) * C;
            for (int c = 0; c < C; ++c) o[c] += x[c] * w[c];
          }
        }
      }
      break;
    }
    case Op::embedding: {
      const Array& T = val(n.in[0]);
      ensure(n.value, n.shape);
      int D = T.dim(1);
      for (size_t i = 0; i < n.ids.size(); ++i)
        std::copy_n(T.ptr() + static_cast<int64_t>(n.ids[i]) * D, D,
                    n.value.ptr() + static_cast<int64_t>(i) * D);
      break;
    }
    case Op::permute: {
      const Array& A = val(n.in[0]);
      ensure(n.value, n.shape);
      auto in_st = strides_of(A.shape);
      auto out_st = strides_of(n.shape);
      size_t rank = n.shape.size();
      std::vector<int64_t> gather(rank);  // stride in input per output axis
      for (size_t i = 0; i < rank; ++i) gather[i] = in_st[static_cast<size_t>(n.axes[i])];
      int64_t total = A.size();
      for (int64_t i = 0; i < total; ++i) {
        int64_t rem = i, src = 0;
        for (size_t d = 0; d < rank; ++d) {
          src += (rem / out_st[d]) * gather[d];
          rem %= out_st[d];
        }
        n.value.data[i] = A.data[static_cast<size_t>(src)];
      }
      break;
    }
    case Op::reshape: {
      const Array& A = val(n.in[0]);
      ensure(n.value, n.shape);
      std::copy(A.data.begin(), A.data.end(), n.value.data.begin());
      break;
    }
    case Op::mse: {
      const Array& A = val(n.in[0]);
      const Array& B = val(n.in[1]);
      ensure(n.value, n.shape);
      double s = 0.0;
      for (int64_t i = 0; i < A.size(); ++i) {
        double t = A.data[i] - B.data[i];
        s += t * t;
      }
      n.value.data[0] = s / static_cast<double>(A.size());
      break;
    }
    case Op::cross_entropy: {
      const Array& Z = val(n.in[0]);
      ensure(n.value, n.shape);
      int V = last_dim(Z.shape);
      int64_t M = row_count(Z.shape);
      ensure(n.aux, Shape{static_cast<int>(M), V});  // probabilities of weighted rows
      double loss = 0.0;
      for (int64_t r = 0; r < M; ++r) {
        double w = n.weights[static_cast<size_t>(r)];
        if (w == 0.0) continue;
        const double* z = Z.ptr() + r * V;
        double* p = n.aux.ptr() + r * V;
        double m = z[0];
        for (int j = 1; j < V; ++j) m = std::max(m, z[j]);
        double s = 0.0;
        for (int j = 0; j < V; ++j) {
          p[j] = std::exp(z[j] - m);
          s += p[j];
        }
        double inv = 1.0 / s;
        for (int j = 0; j < V; ++j) p[j] *= inv;
        double lse = m + std::log(s);
        loss += w * (lse - z[n.ids[static_cast<size_t>(r)]]);
      }
      n.value.data[0] = loss / n.c;
      break;
    }
    case Op::input:
    case Op::param:
    case Op::constant:
      break;
  }
}

Array& Graph::grad_buf(int i) {
  Node& n = nodes_[static_cast<size_t>(i)];
  if (!n.has_grad) {
    ensure(n.grad, n.shape);
    n.grad.fill(0.0);
    n.has_grad = true;
  }
  return n.grad;
}

void Graph::backward(NodeId loss) {
  MAGIC_GRAPH_CHECK(forwarded_, "backward before forward");
  const Node& ln = at(loss);
  MAGIC_GRAPH_CHECK(numel(ln.shape) == 1, "backward target must be scalar, got ",
                    shape_str(ln.shape));
  for (auto& n : nodes_) n.has_grad = false;
  grad_buf(loss.v).data[0] = 1.0;
  for (int i = loss.v; i >= 0; --i) {
    const Node& n = nodes_[static_cast<size_t>(i)];
    if (n.has_grad && n.n_in > 0) accumulate(i);
  }
  // Params untouched by the loss still expose well-defined (zero) gradients.
  for (auto& [name, idx] : params_) (void)grad_buf(idx);
}

void Graph::accumulate(int idx) {
  Node& n = nodes_[static_cast<size_t>(idx)];
  const Array& G = n.grad;
  auto& N = nodes_;
  auto val = [&](int i) -> const Array& { return N[static_cast<size_t>(i)].value; };
  switch (n.op) {
    case Op::matmul: {
      const Array& A = val(n.in[0]);
      const Array& B = val(n.in[1]);
      Array& gA = grad_buf(n.in[0]);
      Array& gB = grad_buf(n.in[1]);
      int K = A.shape.back();
      int N_ = n.shape.back();
      if (B.rank() == 2) {
        int64_t R = row_count(A.shape);
        CMap a(A.ptr(), R, K), g(G.ptr(), R, N_);
        Map ga(gA.ptr(), R, K);
        if (n.transpose_b) {
          CMap b(B.ptr(), N_, K);
          Map gb(gB.ptr(), N_, K);
          add_product(ga, g, b);
          add_product(gb, g.transpose(), a);
        } else {
          CMap b(B.ptr(), K, N_);
          Map gb(gB.ptr(), K, N_);
          add_product(ga, g, b.transpose());
          add_product(gb, a.transpose(), g);
        }
      } else {
        int M = A.shape[A.shape.size() - 2];
        int64_t batches = numel(A.shape) / (static_cast<int64_t>(M) * K);
        for (int64_t i = 0; i < batches; ++i) {
          CMap a(A.ptr() + i * M * K, M, K);
          CMap g(G.ptr() + i * static_cast<int64_t>(M) * N_, M, N_);
          Map ga(gA.ptr() + i * M * K, M, K);
          if (n.transpose_b) {
            CMap b(B.ptr() + i * static_cast<int64_t>(K) * N_, N_, K);
            Map gb(gB.ptr() + i * static_cast<int64_t>(K) * N_, N_, K);
            add_product(ga, g, b);
            add_product(gb, g.transpose(), a);
          } else {
            CMap b(B.ptr() + i * static_cast<int64_t>(K) * N_, K, N_);
            Map gb(gB.ptr() + i * static_cast<int64_t>(K) * N_, K, N_);
            add_product(ga, g, b.transpose());
            add_product(gb, a.transpose(), g);
          }
        }
      }
      break;
    }
    case Op::add: {
      const Array& A = val(n.in[0]);
      const Array& B = val(n.in[1]);
      Array& gA = grad_buf(n.in[0]);
      Array& gB = grad_buf(n.in[1]);
      int64_t total = G.size();
      for (int64_t i = 0; i < total; ++i) gA.data[i] += G.data[i];
      if (A.shape == B.shape) {
        for (int64_t i = 0; i < total; ++i) gB.data[i] += G.data[i];
      } else if (B.rank() == 1 && B.dim(0) == last_dim(A.shape)) {
        int64_t cols = B.dim(0);
        for (int64_t r = 0; r < total / cols; ++r) {
          const double* g = G.ptr() + r * cols;
          for (int64_t j = 0; j < cols; ++j) gB.data[static_cast<size_t>(j)] += g[j];
        }
      } else {
        auto ast = strides_of(A.shape);
        size_t off = A.shape.size() - B.shape.size();
        auto bst = strides_of(B.shape);
        for (int64_t i = 0; i < total; ++i) {
          int64_t rem = i, bi = 0;
          for (size_t d = 0; d < A.shape.size(); ++d) {
            int64_t coord = rem / ast[d];
            rem %= ast[d];
            if (d >= off && B.shape[d - off] != 1) bi += coord * bst[d - off];
          }
          gB.data[static_cast<size_t>(bi)] += G.data[i];
        }
      }
      break;
    }
    case Op::mul: {
      const Array& A = val(n.in[0]);
      const Array& B = val(n.in[1]);
      Array& gA = grad_buf(n.in[0]);
      Array& gB = grad_buf(n.in[1]);
      for (int64_t i = 0; i < G.size(); ++i) {
        gA.data[i] += G.data[i] * B.data[i];
        gB.data[i] += G.data[i] * A.data[i];
      }
      break;
    }
    case Op::scale: {
      Array& gX = grad_buf(n.in[0]);
      for (int64_t i = 0; i < G.size(); ++i) gX.data[i] += G.data[i] * n.c;
      break;
    }
    case Op::gelu: {
      const Array& X = val(n.in[0]);
      Array& gX = grad_buf(n.in[0]);
      for (int64_t i = 0; i < G.size(); ++i) {
        double x = X.data[i];
        double pdf = std::exp(-0.5 * x * x) * kInvSqrt2Pi;
        gX.data[i] += G.data[i] * (n.aux.data[i] + x * pdf);
      }
      break;
    }
    case Op::softmax: {
      Array& gX = grad_buf(n.in[0]);
      int V = last_dim(n.shape);
      int64_t R = row_count(n.shape);
      for (int64_t r = 0; r < R; ++r) {
        const double* y = n.value.ptr() + r * V;
        const double* g = G.ptr() + r * V;
        double* gx = gX.ptr() + r * V;
        double dot = 0.0;
        for (int j = 0; j < V; ++j) dot += g[j] * y[j];
        for (int j = 0; j < V; ++j) gx[j] += y[j] * (g[j] - dot);
      }
      break;
    }
    case Op::layer_norm: {
      const Array& Gn = val(n.in[1]);
      Array& gX = grad_buf(n.in[0]);
      Array& gG = grad_buf(n.in[1]);
      Array& gB = grad_buf(n.in[2]);
      int d = last_dim(n.shape);
      int64_t R = row_count(n.shape);
      for (int64_t r = 0; r < R; ++r) {
        const double* xhat = n.aux.ptr() + r * d;
        const double* g = G.ptr() + r * d;
        double* gx = gX.ptr() + r * d;
        double inv = n.aux2.data[static_cast<size_t>(r)];
        double sum_dxh = 0.0, sum_dxh_xh = 0.0;
        for (int j = 0; j < d; ++j) {
          double dxh = g[j] * Gn.data[static_cast<size_t>(j)];
          sum_dxh += dxh;
          sum_dxh_xh += dxh * xhat[j];
          gG.data[static_cast<size_t>(j)] += g[j] * xhat[j];
          gB.data[static_cast<size_t>(j)] += g[j];
        }
        double m1 = sum_dxh / d, m2 = sum_dxh_xh / d;
        for (int j = 0; j < d; ++j) {
          double dxh = g[j] * Gn.data[static_cast<size_t>(j)];
          gx[j] += inv * (dxh - m1 - xhat[j] * m2);
        }
      }
      break;
    }
    case Op::depthwise_conv1d: {
      const Array& X = val(n.in[0]);
      const Array& W = val(n.in[1]);
      Array& gX = grad_buf(n.in[0]);
      Array& gW = grad_buf(n.in[1]);
      Array& gB = grad_buf(n.in[2]);
      int Bn = X.dim(0), L = X.dim(1), C = X.dim(2), k = W.dim(0);
      int P = k / 2;
      for (int b = 0; b < Bn; ++b) {
        for (int l = 0; l < L; ++l) {
          const double* g = G.ptr() + (static_cast<int64_t>(b) * L + l) * C;
          for (int c = 0; c < C; ++c) gB.data[static_cast<size_t>(c)] += g[c];
          int t0 = std::max(0, P - l), t1 = std::min(k, L + P - l);
          for (int t = t0; t < t1; ++t) {
            int64_t xoff = (static_cast<int64_t>(b) * L + (l + t - P)) * C;
            const double* x = X.ptr() + xoff;
            const double* w = W.ptr() + static_cast<int64_t>(t) * C;
            double* gx = gX.ptr() + xoff;
            double* gw = gW.ptr() + static_cast<int64_t>(t) * C;
            for (int c = 0; c < C; ++c) {
              gx[c] += g[c] * w[c];
              gw[c] += g[c] * x[c];
            }
          }
        }
      }
      break;
    }
    case Op::embedding: {
      Array& gT = grad_buf(n.in[0]);
      int D = gT.dim(1);
      for (size_t i = 0; i < n.ids.size(); ++i) {
        const double* g = G.ptr() + static_cast<int64_t>(i) * D;
        double* gt = gT.ptr() + static_cast<int64_t>(n.ids[i]) * D;
        for (int j = 0; j < D; ++j) gt[j] += g[j];
      }
      break;
    }
    case Op::permute: {
      Array& gX = grad_buf(n.in[0]);
      auto in_st = strides_of(val(n.in[0]).shape);
      auto out_st = strides_of(n.shape);
      size_t rank = n.shape.size();
      std::vector<int64_t> gather(rank);
      for (size_t i = 0; i < rank; ++i) gather[i] = in_st[static_cast<size_t>(n.axes[i])];
      for (int64_t i = 0; i < G.size(); ++i) {
        int64_t rem = i, src = 0;
        for (size_t d = 0; d < rank; ++d) {
          src += (rem / out_st[d]) * gather[d];
          rem %= out_st[d];
        }
        gX.data[static_cast<size_t>(src)] += G.data[i];
      }
      break;
    }
    case Op::reshape: {
      Array& gX = grad_buf(n.in[0]);
      for (int64_t i = 0; i < G.size(); ++i) gX.data[i] += G.data[i];
      break;
    }
    case Op::mse: {
      const Array& A = val(n.in[0]);
      const Array& B = val(n.in[1]);
      Array& gA = grad_buf(n.in[0]);
      Array& gB = grad_buf(n.in[1]);
      double g = G.data[0] * 2.0 / static_cast<double>(A.size());
      for (int64_t i = 0; i < A.size(); ++i) {
        double t = g * (A.data[i] - B.data[i]);
        gA.data[i] += t;
        gB.data[i] -= t;
      }
      break;
    }
    case Op::cross_entropy: {
      Array& gZ = grad_buf(n.in[0]);
      int V = last_dim(val(n.in[0]).shape);
      int64_t M = row_count(val(n.in[0]).shape);
      double g = G.data[0] / n.c;
      for (int64_t r = 0; r < M; ++r) {
        double w = n.weights[static_cast<size_t>(r)];
        if (w == 0.0) continue;
        const double* p = n.aux.ptr() + r * V;
        double* gz = gZ.ptr() + r * V;
        double gw = g * w;
        for (int j = 0; j < V; ++j) gz[j] += gw * p[j];
        gz[n.ids[static_cast<size_t>(r)]] -= gw;
      }
      break;
    }
    case Op::input:
    case Op::param:
    case Op::constant:
      break;
  }
}

const Array& Graph::value(NodeId id) const {
  const Node& n = at(id);
  MAGIC_GRAPH_CHECK(n.op == Op::param || n.op == Op::constant || forwarded_ || n.needs_value,
                    "value() before forward");
  return n.value;
}

const Array& Graph::grad(NodeId id) const {
  const Node& n = at(id);
  MAGIC_GRAPH_CHECK(n.has_grad, "grad() on node without gradient (run backward first)");
  return n.grad;
}

std::map<std::string, Array> Graph::param_grads() const {
  std::map<std::string, Array> out;
  for (auto& [name, idx] : params_) {
    const Node& n = nodes_[static_cast<size_t>(idx)];
    if (n.has_grad)
      out.emplace(name, n.grad);
    else
      out.emplace(name, Array(n.shape));
  }
  return out;
}

std::vector<std::string> Graph::param_names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (auto& [name, idx] : params_) out.push_back(name);
  return out;
}

bool Graph::has_param(const std::string& name) const { return params_.count(name) != 0; }

NodeId Graph::param_node(const std::string& name) const {
  auto it = params_.find(name);
  MAGIC_GRAPH_CHECK(it != params_.end(), "no param named '", name, "'");
  return NodeId{it->second};
}

Array& Graph::param_value(const std::string& name) {
  forwarded_ = false;
  return nodes_[static_cast<size_t>(param_node(name).v)].value;
}

const Array& Graph::param_value(const std::string& name) const {
  return nodes_[static_cast<size_t>(param_node(name).v)].value;
}

const Shape& Graph::shape_of(NodeId id) const { return at(id).shape; }

double relative_error(double a, double b, double floor) {
  double denom = std::max({std::fabs(a), std::fabs(b), floor});
  return std::fabs(a - b) / denom;
}

double grad_check(Graph& g, NodeId loss, double fd_step) {
  g.forward();
  g.backward(loss);
  auto analytic = g.param_grads();
  double worst = 0.0;
  for (const std::string& name : g.param_names()) {
    Array& v = g.param_value(name);
    const Array& ga = analytic.at(name);
    for (int64_t i = 0; i < v.size(); ++i) {
      double orig = v.data[i];
      v.data[i] = orig + fd_step;
      g.forward();
      double lp = g.scalar_value(loss);
      v.data[i] = orig - fd_step;
      g.forward();
      double lm = g.scalar_value(loss);
      v.data[i] = orig;
      double numeric = (lp - lm) / (2.0 * fd_step);
      worst = std::max(worst, relative_error(ga.data[i], numeric, 1e-5));
    }
  }
  g.forward();  // leave values consistent with restored params
  return worst;
}

}  // namespace magic
