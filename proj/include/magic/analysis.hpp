#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "magic/supernet.hpp"
#include "magic/tasks.hpp"
#include "magic/train.hpp"

namespace magic {

// Cosine similarity of two flattened gradient vectors. A zero vector has no
// direction; that degenerate value is defined as 0 and flagged.
double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b,
                         bool* degenerate = nullptr);

// One gradient-interference probe: C children share every layer of `fixed`
// except the m layers following og_layer, where child i takes perms[d][i].
// The probed gradient is read from the shared operator at og_layer.
struct InterferenceProbe {
  int og_layer = 0;  // 0-indexed layer of the shared probed operator
  int m = 1;         // number of differing layers: og_layer+1 .. og_layer+m
  Path fixed;        // common assignment, length N (entries at differing layers unused)
  std::vector<std::vector<int>> perms;  // m x C child->op maps, each a permutation

  int og_op() const { return fixed[static_cast<size_t>(og_layer)]; }
  std::vector<int> differing_layers() const;
  void validate(int num_layers, int num_ops) const;
};

// Draws fixed layers uniformly and, for m >= 2, a random permutation per
// differing layer (pairwise child distance exactly m). m == 1 keeps the
// identity map: child i places candidate i at the single differing layer.
InterferenceProbe make_probe(int num_layers, int num_ops, int og_layer, int m, Rng& rng);

struct SimilarityMatrix {
  std::vector<std::string> labels;  // candidate operator names
  std::vector<double> values;       // C x C, row-major
  bool had_zero_grad = false;

  int dim() const { return static_cast<int>(labels.size()); }
  double at(int i, int j) const { return values[static_cast<size_t>(i * dim() + j)]; }
};

// Entry (i, j): cosine similarity of the shared operator's gradients computed
// from child i and child j on the identical batch. Exactly symmetric with a
// unit diagonal. The net is read-only throughout.
SimilarityMatrix similarity_matrix(const Supernet& net, const InterferenceProbe& probe,
                                   const Batch& batch);

// Mean over off-diagonal entries (the diagonal is identically 1 and carries
// no interference signal).
double off_diagonal_mean(const SimilarityMatrix& s);

struct MCurve {
  int og_layer = 0;
  std::vector<int> m;
  std::vector<double> mean;                    // off-diagonal mean, averaged over repeats
  std::vector<std::vector<double>> per_repeat; // one row per m
};

// Off-diagonal similarity as a function of the number of differing layers m.
// Each repeat draws a fresh probe and batch from `rng`.
MCurve interference_vs_m(const Supernet& net, const Task& task, int og_layer,
                         const std::vector<int>& m_values, int repeats, int batch_size,
                         Rng& rng);

struct LayerSweep {
  int m = 1;
  std::vector<int> layer;
  std::vector<double> mean;
  std::vector<std::vector<double>> per_repeat;
};

// The same experiment probed at several og layers (children differ at the m
// layers after each probed layer).
LayerSweep og_layer_sweep(const Supernet& net, const Task& task, const std::vector<int>& layers,
                          int m, int repeats, int batch_size, Rng& rng);

struct RankReport {
  std::vector<Path> children;
  std::vector<double> proxy;  // negative shared-weights validation loss
  std::vector<double> truth;  // standalone validation metric
  double tau = 0.0;
};

// Scores each child through the shared weights and trains it standalone for
// ground truth, then correlates the two rankings.
RankReport rank_experiment(const Supernet& net, const std::vector<Path>& children,
                           const Task& task, const TrainConfig& standalone_cfg);

nlohmann::ordered_json rank_report_json(const RankReport& r);
RankReport rank_report_from_json(const nlohmann::ordered_json& j);

}  // namespace magic
