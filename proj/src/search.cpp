#include "magic/search.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <tuple>

#include "magic/error.hpp"

namespace magic {

namespace {
constexpr uint64_t kStreamSlotScores = 13;
}

ShrinkState ShrinkState::fresh(int layers, int ops, int deletions_per_epoch) {
  MAGIC_CHECK(deletions_per_epoch >= 1, "deletions per epoch must be >= 1, got ",
              deletions_per_epoch);
  ShrinkState s;
  s.alive = AliveMask::all(layers, ops);
  s.deletions_per_epoch = deletions_per_epoch;
  s.scores.assign(static_cast<size_t>(layers) * static_cast<size_t>(ops), kUnscored);
  return s;
}

int default_deletions_per_epoch(int layers, int ops) {
  return std::max(1, static_cast<int>(std::lround(5.0 * layers * ops / 104.0)));
}

std::vector<double> score_slots(const Supernet& net, const ShrinkState& state, int probe_paths,
                                const std::vector<Batch>& val, Rng& rng) {
  const AliveMask& mask = state.alive;
  MAGIC_CHECK(mask.layers == net.num_layers() && mask.ops == net.num_ops(),
              "alive mask does not match the net");
  MAGIC_CHECK(probe_paths >= 1, "need at least one probe path");
  MAGIC_CHECK(!val.empty(), "need at least one validation batch");

  const size_t slots = static_cast<size_t>(mask.layers) * static_cast<size_t>(mask.ops);
  std::vector<double> sum(slots, 0.0);
  std::vector<int> count(slots, 0);
  for (int s = 0; s < probe_paths; ++s) {
    Path p = sample_uniform(mask, rng);
    double proxy = evaluate_proxy(net, p, val);
    for (int l = 0; l < mask.layers; ++l) {
      size_t slot = static_cast<size_t>(l * mask.ops + p[static_cast<size_t>(l)]);
      sum[slot] += proxy;
      count[slot] += 1;
    }
  }

  std::vector<double> scores(slots, kUnscored);
  for (size_t slot = 0; slot < slots; ++slot)
    if (count[slot] > 0) scores[slot] = sum[slot] / static_cast<double>(count[slot]);
  return scores;
}

int cover_unscored(const Supernet& net, const ShrinkState& state, std::vector<double>& scores,
                   const std::vector<Batch>& val, Rng& rng) {
  const AliveMask& mask = state.alive;
  MAGIC_CHECK(scores.size() == static_cast<size_t>(mask.layers) * static_cast<size_t>(mask.ops),
              "score vector does not match the mask");
  int fixed = 0;
  for (int l = 0; l < mask.layers; ++l) {
    for (int op = 0; op < mask.ops; ++op) {
      size_t slot = static_cast<size_t>(l * mask.ops + op);
      if (!mask.get(l, op) || scores[slot] != kUnscored) continue;
      Path p = sample_uniform(mask, rng);
      p[static_cast<size_t>(l)] = op;
      scores[slot] = evaluate_proxy(net, p, val);
      ++fixed;
    }
  }
  return fixed;
}

std::vector<SlotDeletion> shrink_epoch(ShrinkState& state) {
  AliveMask& mask = state.alive;
  MAGIC_CHECK(mask.unique_path().empty(), "search already finished: one child remains");
  MAGIC_CHECK(state.scores.size() ==
                  static_cast<size_t>(mask.layers) * static_cast<size_t>(mask.ops),
              "score vector does not match the mask");

  std::vector<std::tuple<double, int, int>> order;  // (score, layer, op) ascending
  for (int l = 0; l < mask.layers; ++l) {
    for (int op = 0; op < mask.ops; ++op) {
      if (!mask.get(l, op)) continue;
      double score = state.score_at(l, op);
      MAGIC_CHECK(score != kUnscored, "slot (", l, ",", op,
                  ") is unscored; cover_unscored must run before shrinking");
      order.emplace_back(score, l, op);
    }
  }
  std::sort(order.begin(), order.end());

  std::vector<SlotDeletion> deleted;
  const int epoch = state.epoch + 1;
  for (const auto& [score, l, op] : order) {
    if (static_cast<int>(deleted.size()) == state.deletions_per_epoch) break;
    if (mask.alive_in_layer(l) <= 1) continue;  // a layer is never emptied
    mask.kill(l, op);
    state.scores[static_cast<size_t>(l * mask.ops + op)] = kUnscored;
    deleted.push_back({epoch, l, op, score});
  }
  state.epoch = epoch;
  state.trace.insert(state.trace.end(), deleted.begin(), deleted.end());
  return deleted;
}

SearchResult run_search(Supernet& net, const Task& task, const TrainConfig& cfg,
                        ShrinkState& state, std::ostream* trace) {
  MAGIC_CHECK(state.alive.layers == net.num_layers() && state.alive.ops == net.num_ops(),
              "shrink state does not match the net");
  const std::vector<Batch> val = make_val_batches(task, cfg.val_batches, cfg.batch_size);
  Rng score_rng(derive_seed(cfg.seed, kStreamSlotScores));

  SearchResult out;
  TrainerState ts;
  while (state.alive.unique_path().empty()) {
    if (cfg.steps > 0 && ts.step < cfg.steps) {
      int64_t until = std::min<int64_t>(ts.step + cfg.steps_per_epoch, cfg.steps);
      TrainLog seg = train_supernet(net, task, cfg, &state.alive, &ts, until);
      out.log.steps.insert(out.log.steps.end(), seg.steps.begin(), seg.steps.end());
      out.log.epochs.insert(out.log.epochs.end(), seg.epochs.begin(), seg.epochs.end());
    }
    state.scores = score_slots(net, state, cfg.probe_pool, val, score_rng);
    cover_unscored(net, state, state.scores, val, score_rng);
    std::vector<SlotDeletion> deleted = shrink_epoch(state);
    if (trace) *trace << search_trace_line(state, deleted).dump() << '\n';
  }

  out.child = state.alive.unique_path();
  out.proxy = evaluate_proxy(net, out.child, val);
  out.shrink_epochs = state.epoch;
  return out;
}

nlohmann::ordered_json search_trace_line(const ShrinkState& state,
                                         const std::vector<SlotDeletion>& deleted) {
  nlohmann::ordered_json j;
  j["epoch"] = state.epoch;
  j["deleted"] = nlohmann::ordered_json::array();
  for (const SlotDeletion& d : deleted) j["deleted"].push_back({d.layer, d.op});
  j["slot_scores"] = nlohmann::ordered_json::array();
  for (int l = 0; l < state.alive.layers; ++l)
    for (int op = 0; op < state.alive.ops; ++op)
      if (state.alive.get(l, op) && state.score_at(l, op) != kUnscored)
        j["slot_scores"].push_back({l, op, state.score_at(l, op)});
  j["alive_count"] = state.alive.alive_count();
  return j;
}

}  // namespace magic
