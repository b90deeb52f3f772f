#include "magic/rng.hpp"

#include <cmath>
#include <sstream>

#include "magic/error.hpp"

namespace magic {

uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

uint64_t derive_seed(uint64_t seed, uint64_t stream) {
  uint64_t state = seed;
  (void)splitmix64(state);
  state ^= 0x9e3779b97f4a7c15ULL * (stream + 1);
  return splitmix64(state);
}

int64_t Rng::below(int64_t n) {
  MAGIC_CHECK(n > 0, "Rng::below requires n > 0, got ", n);
  const uint64_t bound = static_cast<uint64_t>(n);
  const uint64_t threshold = (0 - bound) % bound;  // 2^64 mod n
  for (;;) {
    uint64_t r = next_u64();
    if (r >= threshold) return static_cast<int64_t>(r % bound);
  }
}

double Rng::uniform() {
  // 53 random bits -> [0, 1)
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // open-interval uniforms keep log() finite
  double u1 = (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  double u2 = (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

double Rng::truncated_normal(double stddev, double clip_sigmas) {
  for (;;) {
    double z = normal();
    if (std::fabs(z) <= clip_sigmas) return z * stddev;
  }
}

std::vector<int> Rng::sample_distinct(int n, int k) {
  MAGIC_CHECK(k >= 0 && k <= n, "sample_distinct: need 0 <= k <= n, got k=", k, " n=", n);
  // Floyd's algorithm: k draws, no O(n) scratch.
  std::vector<int> out;
  out.reserve(static_cast<size_t>(k));
  for (int j = n - k; j < n; ++j) {
    int t = static_cast<int>(below(j + 1));
    bool seen = false;
    for (int v : out)
      if (v == t) {
        seen = true;
        break;
      }
    if (seen)
      out.push_back(j);
    else
      out.push_back(t);
  }
  return out;
}

std::string Rng::serialize() const {
  std::ostringstream os;
  os << engine_ << ' ' << (has_spare_ ? 1 : 0);
  if (has_spare_) {
    os << ' ';
    os.precision(17);
    os << spare_;
  }
  return os.str();
}

Rng Rng::deserialize(const std::string& s) {
  Rng r(0);
  std::istringstream is(s);
  is >> r.engine_;
  int flag = 0;
  is >> flag;
  MAGIC_CHECK(!is.fail(), "corrupt rng state string");
  r.has_spare_ = flag != 0;
  if (r.has_spare_) {
    is >> r.spare_;
    MAGIC_CHECK(!is.fail(), "corrupt rng state string (spare)");
  }
  return r;
}

}  // namespace magic
