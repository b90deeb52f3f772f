#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "magic/graph.hpp"

namespace magic {

enum class OpKind : uint8_t { mha, ffn, conv };

// One candidate operator for a supernet slot. All operators map
// [B, L, d_model] -> [B, L, d_model] and sit inside a residual + layer-norm
// wrapper owned by the layer (the wrapper's norm parameters are not part of
// the operator and are excluded from its parameter count).
struct OperatorSpec {
  OpKind kind = OpKind::ffn;
  std::string name;
  int heads = 0;      // mha
  int head_dim = 0;   // mha
  int inner_dim = 0;  // ffn
  int kernel = 0;     // conv: depthwise kernel width (odd)

  static OperatorSpec mha(int heads, int head_dim, std::string name = "");
  static OperatorSpec ffn(int inner_dim, std::string name = "");
  // separable convolution: depthwise(k) -> pointwise -> GELU -> pointwise
  static OperatorSpec conv(int kernel, std::string name = "");
};

// Parameter shapes of one operator instance, keyed by name relative to the
// slot (e.g. "wq", "b1", "dw").
std::map<std::string, Shape> op_param_shapes(const OperatorSpec& spec, int d_model);

int64_t op_param_count(const OperatorSpec& spec, int d_model);

// Parameter count in millions, rounded to two decimals (reporting format).
double op_param_millions(const OperatorSpec& spec, int d_model);

// Appends the operator body to the graph: prefix-qualified params must already
// exist in g. x is [B, L, d]; returns a [B, L, d] node. `mask`, when valid, is
// added to the attention scores (additive, e.g. -1e9 at disallowed positions)
// and is ignored by non-attention operators.
NodeId apply_operator(Graph& g, const OperatorSpec& spec, const std::string& prefix, NodeId x,
                      NodeId mask = NodeId{});

}  // namespace magic
