#include "magic/align.hpp"

#include <algorithm>
#include <cmath>

#include "magic/error.hpp"

namespace magic {

void AlignmentConfig::validate() const {
  MAGIC_CHECK(std::isfinite(lambda) && lambda >= 0.0, "alignment lambda must be finite and >= 0");
  MAGIC_CHECK(block_size >= 1, "alignment block_size must be >= 1");
  MAGIC_CHECK(warm_start_epochs >= 0, "warm_start_epochs must be >= 0");
  MAGIC_CHECK(average_children >= 0, "average_children must be >= 0");
}

void AnchorPolicy::validate() const {
  if (kind == Kind::top_p) {
    MAGIC_CHECK(p > 0.0 && p < 100.0, "anchor percentile p must be in (0,100), got ", p);
    MAGIC_CHECK(r > 0.0 && r < 100.0, "anchor hysteresis r must be in (0,100), got ", r);
  }
}

const char* anchor_policy_name(AnchorPolicy::Kind k) {
  return k == AnchorPolicy::Kind::best_so_far ? "best_so_far" : "top_p";
}

std::vector<int> aligned_layers(int num_layers, int block_size) {
  MAGIC_CHECK(num_layers >= 1 && block_size >= 1, "invalid aligned_layers arguments");
  std::vector<int> out;
  for (int boundary = block_size; boundary <= num_layers; boundary += block_size)
    out.push_back(boundary - 1);
  if (num_layers % block_size != 0) out.push_back(num_layers - 1);  // final partial block
  return out;
}

double alignment_loss_value(const HiddenTrace& anchor, const HiddenTrace& child,
                            const AlignmentConfig& cfg) {
  MAGIC_CHECK(anchor.size() == child.size(), "trace layer count mismatch: ", anchor.size(), " vs ",
              child.size());
  MAGIC_CHECK(!anchor.empty(), "empty traces");
  double total = 0.0;
  for (int l : aligned_layers(static_cast<int>(anchor.size()), cfg.block_size)) {
    const Array& a = anchor[static_cast<size_t>(l)];
    const Array& c = child[static_cast<size_t>(l)];
    MAGIC_CHECK(a.same_shape(c), "trace shape mismatch at layer ", l, ": ", shape_str(a.shape),
                " vs ", shape_str(c.shape));
    double s = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) {
      double d = a.data[i] - c.data[i];
      s += d * d;
    }
    total += s / static_cast<double>(a.size());
  }
  return total;
}

double combined_loss(double pred_loss, double align_loss, double lambda) {
  MAGIC_CHECK(std::isfinite(pred_loss) && std::isfinite(align_loss),
              "combined_loss needs finite terms");
  return pred_loss + lambda * align_loss;
}

HiddenTrace average_trace(const std::vector<HiddenTrace>& traces) {
  MAGIC_CHECK(!traces.empty(), "average_trace of an empty list");
  HiddenTrace out = traces.front();
  for (size_t t = 1; t < traces.size(); ++t) {
    MAGIC_CHECK(traces[t].size() == out.size(), "trace layer count mismatch");
    for (size_t l = 0; l < out.size(); ++l) {
      MAGIC_CHECK(traces[t][l].same_shape(out[l]), "trace shape mismatch at layer ", l);
      for (int64_t i = 0; i < out[l].size(); ++i) out[l].data[i] += traces[t][l].data[i];
    }
  }
  double inv = 1.0 / static_cast<double>(traces.size());
  for (auto& layer : out)
    for (auto& v : layer.data) v *= inv;
  return out;
}

NodeId add_alignment_loss(ChildGraph& child, const HiddenTrace& anchor_trace,
                          const AlignmentConfig& cfg) {
  MAGIC_CHECK(anchor_trace.size() == child.layer_outputs.size(),
              "anchor trace has ", anchor_trace.size(), " layers, child has ",
              child.layer_outputs.size());
  NodeId total{};
  for (int l : aligned_layers(static_cast<int>(anchor_trace.size()), cfg.block_size)) {
    NodeId target = child.g.constant(anchor_trace[static_cast<size_t>(l)]);
    NodeId term = child.g.mse(child.layer_outputs[static_cast<size_t>(l)], target);
    total = total.valid() ? child.g.add(total, term) : term;
  }
  return total;
}

AnchorState maybe_replace_anchor(AnchorState state, const Path& candidate, double candidate_val,
                                 int epoch) {
  state.last_eval_epoch = epoch;
  if (!state.has_anchor || candidate_val > state.val_score) {
    state.has_anchor = true;
    state.anchor = candidate;
    state.val_score = candidate_val;
  }
  return state;
}

AnchorState select_anchor_top_p(const std::vector<std::pair<Path, double>>& scored_pool,
                                AnchorState state, const AnchorPolicy& policy, int epoch) {
  MAGIC_CHECK(!scored_pool.empty(), "select_anchor_top_p: empty pool");
  policy.validate();
  state.last_eval_epoch = epoch;

  // rank pool by val descending; percentile of index i is 100*i/(n-1)
  std::vector<size_t> order(scored_pool.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](size_t x, size_t y) {
    return scored_pool[x].second > scored_pool[y].second;
  });
  auto percentile_of = [&](size_t rank) {
    return order.size() == 1 ? 0.0
                             : 100.0 * static_cast<double>(rank) /
                                   static_cast<double>(order.size() - 1);
  };

  double lo = std::max(policy.p - policy.r, 0.0);
  double hi = std::min(policy.p + policy.r, 100.0);
  if (state.has_anchor) {
    for (size_t rank = 0; rank < order.size(); ++rank) {
      if (scored_pool[order[rank]].first != state.anchor) continue;
      double pct = percentile_of(rank);
      if (pct >= lo && pct <= hi) {  // within the hysteresis band: keep
        state.val_score = scored_pool[order[rank]].second;
        return state;
      }
      break;
    }
  }

  // adopt the model nearest the target percentile; earlier rank wins ties
  size_t best_rank = 0;
  double best_gap = std::numeric_limits<double>::infinity();
  for (size_t rank = 0; rank < order.size(); ++rank) {
    double gap = std::fabs(percentile_of(rank) - policy.p);
    if (gap < best_gap) {
      best_gap = gap;
      best_rank = rank;
    }
  }
  state.has_anchor = true;
  state.anchor = scored_pool[order[best_rank]].first;
  state.val_score = scored_pool[order[best_rank]].second;
  return state;
}

}  // namespace magic
