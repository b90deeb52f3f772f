#pragma once

#include <cstdint>
#include <vector>

#include "magic/rng.hpp"
#include "magic/supernet.hpp"

namespace magic {

// Which (layer, op) slots may be sampled. Progressive shrinking narrows this;
// a fresh mask has everything alive.
struct AliveMask {
  int layers = 0;
  int ops = 0;
  std::vector<uint8_t> alive;

  static AliveMask all(int layers, int ops);

  bool get(int layer, int op) const { return alive[static_cast<size_t>(layer * ops + op)] != 0; }
  void kill(int layer, int op) { alive[static_cast<size_t>(layer * ops + op)] = 0; }
  int alive_in_layer(int layer) const;
  int alive_count() const;
  bool path_alive(const Path& p) const;
  // single alive op per layer -> that unique path; otherwise empty
  Path unique_path() const;
};

struct SamplerConfig {
  enum class Mode : uint8_t { uniform, magic_t };
  Mode mode = Mode::uniform;
  int k = 1;         // operators substituted per gradual-modification step
  bool lazy = false; // allow re-drawing the incumbent op (distance may be < k)
};

const char* sampler_mode_name(SamplerConfig::Mode m);

// Uniform single-path sampling: each layer's op i.i.d. uniform over its alive
// candidates.
Path sample_uniform(const AliveMask& mask, Rng& rng);

// Gradual modification: substitute the ops of k distinct layers of `prev`.
// With lazy=false the replacement is drawn from the other alive ops, so the
// Hamming distance is exactly k (layers with a single alive op are not
// eligible); with lazy=true the draw includes the incumbent (distance <= k).
// A two-candidate space with lazy=false is a parity-periodic walk and is
// rejected.
Path sample_magic_t(const Path& prev, const AliveMask& mask, const SamplerConfig& cfg, Rng& rng);

// Repairs a path whose ops were deleted under it: every dead (layer, op) is
// redrawn uniformly from that layer's alive candidates, alive layers kept.
Path resample_dead_layers(const Path& p, const AliveMask& mask, Rng& rng);

int hamming(const Path& a, const Path& b);

// Mean Hamming distance of two independent uniform samples: N(C-1)/C.
double expected_hamming_uniform(int num_layers, int num_ops);

}  // namespace magic
