#pragma once

#include <limits>
#include <utility>
#include <vector>

#include "magic/supernet.hpp"

namespace magic {

// Per-layer hidden activations of one child forward pass.
using HiddenTrace = std::vector<Array>;

struct AlignmentConfig {
  double lambda = 0.5;        // weight of the alignment term in the combined loss
  int block_size = 4;         // align at layers b, 2b, ... (plus N when b doesn't divide N)
  int warm_start_epochs = 3;  // pure prediction loss before alignment kicks in
  bool average_align = false; // align against the mean trace of sampled children, all layers
  int average_children = 0;   // trace count for average_align; 0 -> one per candidate op

  void validate() const;
};

// 0-indexed layers participating in alignment: block boundaries b, 2b, ...,
// plus the final layer when block_size does not divide num_layers.
// block_size 1 aligns every layer.
std::vector<int> aligned_layers(int num_layers, int block_size);

// Sum over aligned layers of mean-squared-error between traces.
double alignment_loss_value(const HiddenTrace& anchor, const HiddenTrace& child,
                            const AlignmentConfig& cfg);

double combined_loss(double pred_loss, double align_loss, double lambda);

// Elementwise mean trace of several children.
HiddenTrace average_trace(const std::vector<HiddenTrace>& traces);

// Grafts the alignment objective onto a child graph: anchor activations enter
// as constants, so no gradient reaches the anchor. Returns the scalar
// alignment-loss node.
NodeId add_alignment_loss(ChildGraph& child, const HiddenTrace& anchor_trace,
                          const AlignmentConfig& cfg);

struct AnchorPolicy {
  enum class Kind : uint8_t { best_so_far, top_p };
  Kind kind = Kind::best_so_far;
  double p = 10.0;  // target percentile (0 = best) for top_p
  double r = 5.0;   // hysteresis half-width

  void validate() const;
};

const char* anchor_policy_name(AnchorPolicy::Kind k);

struct AnchorState {
  bool has_anchor = false;
  Path anchor;
  double val_score = -std::numeric_limits<double>::infinity();
  int last_eval_epoch = -1;
};

// Strict-improvement rule: replace iff candidate_val > state.val_score.
AnchorState maybe_replace_anchor(AnchorState state, const Path& candidate, double candidate_val,
                                 int epoch);

// Top-p% rule with hysteresis: keep the incumbent while its percentile in the
// scored pool stays within [p-r, p+r]; otherwise adopt the pool model nearest
// the p-th percentile (ties -> higher val). Percentile 0 is the best model.
AnchorState select_anchor_top_p(const std::vector<std::pair<Path, double>>& scored_pool,
                                AnchorState state, const AnchorPolicy& policy, int epoch);

}  // namespace magic
