#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace magic {

// splitmix64 step; used to derive independent seeds for named streams.
uint64_t splitmix64(uint64_t& state);

// Stable seed for stream `stream` of run seed `seed`.
uint64_t derive_seed(uint64_t seed, uint64_t stream);

// Deterministic RNG with self-contained distributions. std::mt19937_64 output
// is pinned by the standard; the distribution helpers below avoid the
// implementation-defined std::*_distribution classes so results are
// reproducible across toolchains.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Unbiased integer in [0, n), n > 0.
  int64_t below(int64_t n);

  double uniform();  // [0, 1)
  double uniform(double lo, double hi);

  double normal();  // standard normal (Box-Muller with cached spare)

  // Normal(0, stddev) resampled until |z| <= clip_sigmas * stddev.
  double truncated_normal(double stddev, double clip_sigmas = 2.0);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i)
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(below(i + 1))]);
  }

  // k distinct values from [0, n), in draw order.
  std::vector<int> sample_distinct(int n, int k);

  // Full textual engine state; restores bit-exact continuation.
  std::string serialize() const;
  static Rng deserialize(const std::string& s);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace magic
