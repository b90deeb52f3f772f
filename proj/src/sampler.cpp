#include "magic/sampler.hpp"

#include "magic/error.hpp"

namespace magic {

AliveMask AliveMask::all(int layers, int ops) {
  MAGIC_CHECK(layers > 0 && ops > 0, "AliveMask needs positive dimensions");
  AliveMask m;
  m.layers = layers;
  m.ops = ops;
  m.alive.assign(static_cast<size_t>(layers) * ops, 1);
  return m;
}

int AliveMask::alive_in_layer(int layer) const {
  int n = 0;
  for (int c = 0; c < ops; ++c) n += get(layer, c) ? 1 : 0;
  return n;
}

int AliveMask::alive_count() const {
  int n = 0;
  for (uint8_t v : alive) n += v ? 1 : 0;
  return n;
}

bool AliveMask::path_alive(const Path& p) const {
  if (static_cast<int>(p.size()) != layers) return false;
  for (int l = 0; l < layers; ++l)
    if (p[static_cast<size_t>(l)] < 0 || p[static_cast<size_t>(l)] >= ops ||
        !get(l, p[static_cast<size_t>(l)]))
      return false;
  return true;
}

Path AliveMask::unique_path() const {
  Path p(static_cast<size_t>(layers));
  for (int l = 0; l < layers; ++l) {
    if (alive_in_layer(l) != 1) return {};
    for (int c = 0; c < ops; ++c)
      if (get(l, c)) p[static_cast<size_t>(l)] = c;
  }
  return p;
}

const char* sampler_mode_name(SamplerConfig::Mode m) {
  return m == SamplerConfig::Mode::uniform ? "uniform" : "magic_t";
}

namespace {

int draw_alive(const AliveMask& mask, int layer, Rng& rng, int exclude = -1) {
  int n = 0;
  for (int c = 0; c < mask.ops; ++c) n += (mask.get(layer, c) && c != exclude) ? 1 : 0;
  MAGIC_CHECK(n > 0, "no alive candidate at layer ", layer, exclude >= 0 ? " besides the incumbent" : "");
  int pick = static_cast<int>(rng.below(n));
  for (int c = 0; c < mask.ops; ++c) {
    if (!mask.get(layer, c) || c == exclude) continue;
    if (pick-- == 0) return c;
  }
  throw Error("draw_alive: unreachable");
}

}  // namespace

Path sample_uniform(const AliveMask& mask, Rng& rng) {
  Path p(static_cast<size_t>(mask.layers));
  for (int l = 0; l < mask.layers; ++l) p[static_cast<size_t>(l)] = draw_alive(mask, l, rng);
  return p;
}

Path resample_dead_layers(const Path& p, const AliveMask& mask, Rng& rng) {
  MAGIC_CHECK(static_cast<int>(p.size()) == mask.layers, "path length ", p.size(),
              " does not match ", mask.layers, " layers");
  Path out = p;
  for (int l = 0; l < mask.layers; ++l) {
    int& op = out[static_cast<size_t>(l)];
    MAGIC_CHECK(op >= 0 && op < mask.ops, "op ", op, " out of range at layer ", l);
    if (!mask.get(l, op)) op = draw_alive(mask, l, rng);
  }
  return out;
}

Path sample_magic_t(const Path& prev, const AliveMask& mask, const SamplerConfig& cfg, Rng& rng) {
  MAGIC_CHECK(mask.path_alive(prev), "previous child is not alive under the current mask");
  MAGIC_CHECK(cfg.k >= 1 && cfg.k <= mask.layers, "substitution count k=", cfg.k,
              " out of range [1,", mask.layers, "]");
  MAGIC_CHECK(cfg.lazy || mask.ops != 2,
              "two-candidate spaces need lazy=true: strict substitution alternates op parity and "
              "the walk never converges");

  // eligible layers: lazy draws can land anywhere; strict substitution needs
  // an alternative op
  std::vector<int> eligible;
  eligible.reserve(static_cast<size_t>(mask.layers));
  for (int l = 0; l < mask.layers; ++l)
    if (cfg.lazy || mask.alive_in_layer(l) >= 2) eligible.push_back(l);

  Path next = prev;
  int k = std::min<int>(cfg.k, static_cast<int>(eligible.size()));
  std::vector<int> chosen = rng.sample_distinct(static_cast<int>(eligible.size()), k);
  for (int idx : chosen) {
    int l = eligible[static_cast<size_t>(idx)];
    int exclude = cfg.lazy ? -1 : prev[static_cast<size_t>(l)];
    next[static_cast<size_t>(l)] = draw_alive(mask, l, rng, exclude);
  }
  return next;
}

int hamming(const Path& a, const Path& b) {
  MAGIC_CHECK(a.size() == b.size(), "hamming: length mismatch");
  int d = 0;
  for (size_t i = 0; i < a.size(); ++i) d += a[i] != b[i] ? 1 : 0;
  return d;
}

double expected_hamming_uniform(int num_layers, int num_ops) {
  MAGIC_CHECK(num_layers > 0 && num_ops > 0, "invalid space dimensions");
  return static_cast<double>(num_layers) * (num_ops - 1) / num_ops;
}

}  // namespace magic
