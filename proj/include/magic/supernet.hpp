#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "magic/graph.hpp"
#include "magic/ops.hpp"

namespace magic {

// A child architecture: one candidate operator index per layer.
using Path = std::vector<int>;

std::string path_str(const Path& p);          // "2,0,1,..."
Path parse_path(const std::string& s);        // inverse of path_str
std::string layer_prefix(int layer);          // "l03."
std::string slot_prefix(int layer, int op);   // "l03.o1."

struct SupernetConfig {
  int num_layers = 12;
  int d_model = 64;
  int vocab = 64;
  int seq_len = 32;
  uint64_t init_seed = 1;
  std::vector<OperatorSpec> candidates;

  int num_ops() const { return static_cast<int>(candidates.size()); }

  // Desk-scale default: 6 layers x {mha, ffn, conv3, conv5} at d_model 64.
  static SupernetConfig desk_default(uint64_t init_seed = 1);
};

// One batch of token sequences. `weights` gates the loss per position
// (masked-prediction tasks set 1 at masked positions, 0 elsewhere); targets
// of zero-weight positions are ignored and conventionally -1.
struct Batch {
  int batch = 0;
  int seq = 0;
  std::vector<int> tokens;
  std::vector<int> targets;
  std::vector<double> weights;

  bool has_targets() const { return !targets.empty(); }
};

// Weight-sharing supernet: embedding + N layers x C candidate operators +
// head, all parameters held in one name-keyed store. Children are built as
// fresh graphs that copy the parameters along their path.
class Supernet {
 public:
  explicit Supernet(SupernetConfig cfg);

  const SupernetConfig& config() const { return cfg_; }
  int num_layers() const { return cfg_.num_layers; }
  int num_ops() const { return cfg_.num_ops(); }

  std::map<std::string, Array>& params() { return params_; }
  const std::map<std::string, Array>& params() const { return params_; }
  Array& param(const std::string& name);

  // Parameter names of slot (layer, op), fully qualified and sorted.
  std::vector<std::string> slot_param_names(int layer, int op) const;
  // All parameter names a child on `path` trains (embeddings and head
  // included), sorted.
  std::vector<std::string> path_param_names(const Path& path) const;

  void validate_path(const Path& p) const;
  int64_t total_param_count() const;

 private:
  SupernetConfig cfg_;
  std::map<std::string, Array> params_;
};

struct ChildGraph {
  Graph g;
  NodeId logits;                      // [B, L, vocab]
  NodeId loss;                        // masked CE; invalid when batch has no targets
  std::vector<NodeId> layer_outputs;  // activation after each residual+norm layer
};

ChildGraph build_child(const Supernet& net, const Path& path, const Batch& batch);

// Fraction of weight>0 positions whose argmax logit equals the target.
double masked_accuracy(const Array& logits, const Batch& batch);

// Flattens the named gradients into one vector, name order (lexicographic).
std::vector<double> flatten_named(const std::map<std::string, Array>& tensors,
                                  const std::vector<std::string>& names);

}  // namespace magic
