#pragma once

#include <cstdint>
#include <vector>

namespace magic {

// Exact convergence diagnostics for the k=1 gradual-modification random walk
// on the product space of C ops per layer x N layers.
struct MixingReport {
  int layers = 0;
  int ops = 0;
  bool lazy = false;
  bool non_ergodic = false;         // strict substitution over C=2 never converges
  std::vector<int> t;               // 0..t_max
  std::vector<double> tv;           // exact d_TV(pi_t, uniform)
  std::vector<double> coupling_bound;  // N * exp(-t/N)
  std::vector<double> decay_envelope;     // exp(-t/N - ln N), recorded only
};

// Evolves the exact distribution of the walk from a point mass and records
// d_TV against uniform per step. Requires C^N <= 100000 states; larger spaces
// should use lumped_mixing_curve (exact for any N by orbit symmetry).
// start_state picks the initial child in mixed-radix encoding; the curve is
// start-invariant (vertex-transitive walk), which tests exercise directly.
MixingReport exact_mixing_curve(int num_layers, int num_ops, bool lazy, int t_max,
                                int64_t start_state = 0);

// Same curve via the agreement-count lumping (birth-death chain over how many
// layers still match the start state). Exact for arbitrary N since the walk
// is symmetric under per-layer op relabeling.
MixingReport lumped_mixing_curve(int num_layers, int num_ops, bool lazy, int t_max);

// Steps sufficient for d_TV <= epsilon: ceil(N ln N + N ln(1/epsilon)).
int mixing_steps_for(double epsilon, int num_layers);

}  // namespace magic
