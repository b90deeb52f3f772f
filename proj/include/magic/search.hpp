#pragma once

#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "magic/sampler.hpp"
#include "magic/train.hpp"

namespace magic {

// Score a slot never hit by any probe path carries until it is resampled.
inline constexpr double kUnscored = -std::numeric_limits<double>::infinity();

struct SlotDeletion {
  int epoch = 0;
  int layer = 0;
  int op = 0;
  double score = 0.0;
};

// Progressive-shrinking bookkeeping: which slots remain, the deletion budget
// per shrink epoch, the latest per-slot scores, and the deletion history.
struct ShrinkState {
  AliveMask alive;
  int deletions_per_epoch = 1;
  std::vector<double> scores;  // layers x ops row-major; dead or unsampled slots -inf
  std::vector<SlotDeletion> trace;
  int epoch = 0;  // shrink epochs completed

  static ShrinkState fresh(int layers, int ops, int deletions_per_epoch);
  double score_at(int layer, int op) const {
    return scores[static_cast<size_t>(layer * alive.ops + op)];
  }
};

// Deletion budget scaled to the space: one slot per epoch per ~21 slots.
int default_deletions_per_epoch(int layers, int ops);

// Mean shared-weights proxy over `probe_paths` uniform alive paths, credited
// to every slot each path passes through. Alive slots missed by every draw
// keep the kUnscored sentinel; callers resample those before shrinking.
std::vector<double> score_slots(const Supernet& net, const ShrinkState& state, int probe_paths,
                                const std::vector<Batch>& val, Rng& rng);

// Scores every sentinel slot with one forced path through it so shrink
// decisions never act on unsampled slots. Returns the number of slots fixed.
int cover_unscored(const Supernet& net, const ShrinkState& state, std::vector<double>& scores,
                   const std::vector<Batch>& val, Rng& rng);

// Deletes up to deletions_per_epoch lowest-scoring alive slots, never
// emptying a layer; ties break toward the lower layer, then the lower op.
// Appends to the trace and returns this epoch's deletions.
std::vector<SlotDeletion> shrink_epoch(ShrinkState& state);

struct SearchResult {
  Path child;
  double proxy = 0.0;
  int shrink_epochs = 0;
  TrainLog log;
};

// One epoch of alive-restricted training, slot scoring, and shrinking per
// round until a single child remains. Training stops once cfg.steps is spent;
// shrinking continues on frozen weights. Each round appends one JSONL line
// {epoch, deleted, slot_scores, alive_count} to `trace` when given.
SearchResult run_search(Supernet& net, const Task& task, const TrainConfig& cfg,
                        ShrinkState& state, std::ostream* trace = nullptr);

nlohmann::ordered_json search_trace_line(const ShrinkState& state,
                                         const std::vector<SlotDeletion>& deleted);

}  // namespace magic
