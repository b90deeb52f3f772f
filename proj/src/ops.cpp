#include "magic/ops.hpp"

#include <cmath>

#include "magic/error.hpp"

namespace magic {

OperatorSpec OperatorSpec::mha(int heads, int head_dim, std::string name) {
  MAGIC_CHECK(heads > 0 && head_dim > 0, "mha needs positive heads/head_dim");
  OperatorSpec s;
  s.kind = OpKind::mha;
  s.heads = heads;
  s.head_dim = head_dim;
  s.name = name.empty() ? detail::cat("mha", heads) : std::move(name);
  return s;
}

OperatorSpec OperatorSpec::ffn(int inner_dim, std::string name) {
  MAGIC_CHECK(inner_dim > 0, "ffn needs positive inner_dim");
  OperatorSpec s;
  s.kind = OpKind::ffn;
  s.inner_dim = inner_dim;
  s.name = name.empty() ? detail::cat("ffn", inner_dim) : std::move(name);
  return s;
}

OperatorSpec OperatorSpec::conv(int kernel, std::string name) {
  MAGIC_CHECK(kernel > 0 && kernel % 2 == 1, "conv kernel must be odd and positive, got ", kernel);
  OperatorSpec s;
  s.kind = OpKind::conv;
  s.kernel = kernel;
  s.name = name.empty() ? detail::cat("conv", kernel) : std::move(name);
  return s;
}

std::map<std::string, Shape> op_param_shapes(const OperatorSpec& spec, int d_model) {
  const int d = d_model;
  std::map<std::string, Shape> out;
  switch (spec.kind) {
    case OpKind::mha: {
      int q = spec.heads * spec.head_dim;
      out["wq"] = {d, q};
      out["bq"] = {q};
      out["wk"] = {d, q};
      out["bk"] = {q};
      out["wv"] = {d, q};
      out["bv"] = {q};
      out["wo"] = {q, d};
      out["bo"] = {d};
      break;
    }
    case OpKind::ffn: {
      out["w1"] = {d, spec.inner_dim};
      out["b1"] = {spec.inner_dim};
      out["w2"] = {spec.inner_dim, d};
      out["b2"] = {d};
      break;
    }
    case OpKind::conv: {
      out["dw"] = {spec.kernel, d};
      out["dwb"] = {d};
      out["pw1"] = {d, d};
      out["pw1b"] = {d};
      out["pw2"] = {d, d};
      out["pw2b"] = {d};
      break;
    }
  }
  return out;
}

int64_t op_param_count(const OperatorSpec& spec, int d_model) {
  int64_t n = 0;
  for (auto& [name, shape] : op_param_shapes(spec, d_model)) n += numel(shape);
  return n;
}

double op_param_millions(const OperatorSpec& spec, int d_model) {
  double m = static_cast<double>(op_param_count(spec, d_model)) / 1e6;
  return std::round(m * 100.0) / 100.0;
}

NodeId apply_operator(Graph& g, const OperatorSpec& spec, const std::string& prefix, NodeId x,
                      NodeId mask) {
  auto P = [&](const char* n) { return g.param_node(prefix + n); };
  const Shape& sx = g.shape_of(x);
  MAGIC_CHECK(sx.size() == 3, "operator input must be [B,L,d], got ", shape_str(sx));
  int B = sx[0], L = sx[1];
  switch (spec.kind) {
    case OpKind::mha: {
      int h = spec.heads, hd = spec.head_dim;
      auto split = [&](NodeId t) { return g.permute(g.reshape(t, {B, L, h, hd}), {0, 2, 1, 3}); };
      NodeId Q = split(g.linear(x, P("wq"), P("bq")));
      NodeId K = split(g.linear(x, P("wk"), P("bk")));
      NodeId V = split(g.linear(x, P("wv"), P("bv")));
      NodeId scores = g.scale(g.matmul(Q, K, /*transpose_b=*/true),
                              1.0 / std::sqrt(static_cast<double>(hd)));
      if (mask.valid()) scores = g.add(scores, mask);
      NodeId ctx = g.matmul(g.softmax(scores), V);  // [B,h,L,hd]
      NodeId merged = g.reshape(g.permute(ctx, {0, 2, 1, 3}), {B, L, h * hd});
      return g.linear(merged, P("wo"), P("bo"));
    }
    case OpKind::ffn:
      return g.linear(g.gelu(g.linear(x, P("w1"), P("b1"))), P("w2"), P("b2"));
    case OpKind::conv: {
      NodeId t = g.depthwise_conv1d(x, P("dw"), P("dwb"));
      t = g.gelu(g.pointwise_conv1d(t, P("pw1"), P("pw1b")));
      return g.pointwise_conv1d(t, P("pw2"), P("pw2b"));
    }
  }
  throw Error("unreachable operator kind");
}

}  // namespace magic
