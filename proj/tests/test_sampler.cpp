#include <doctest.h>

#include <cmath>
#include <vector>

#include "magic/error.hpp"
#include "magic/sampler.hpp"

using namespace magic;

TEST_CASE("alive mask bookkeeping") {
  AliveMask m = AliveMask::all(3, 4);
  CHECK(m.alive_count() == 12);
  CHECK(m.alive_in_layer(1) == 4);
  CHECK(m.unique_path().empty());

  m.kill(1, 0);
  m.kill(1, 2);
  m.kill(1, 3);
  CHECK(m.alive_in_layer(1) == 1);
  CHECK(m.alive_count() == 9);
  CHECK(m.path_alive({0, 1, 3}));
  CHECK_FALSE(m.path_alive({0, 2, 3}));   // dead op
  CHECK_FALSE(m.path_alive({0, 1}));      // wrong length
  CHECK_FALSE(m.path_alive({0, 1, 4}));   // out of range
  CHECK(m.unique_path().empty());         // layers 0 and 2 still have 4 alive

  for (int l : {0, 2})
    for (int c : {0, 1, 3}) m.kill(l, c);
  CHECK(m.unique_path() == Path{2, 1, 2});
}

TEST_CASE("uniform sampling hits every alive slot uniformly") {
  AliveMask m = AliveMask::all(4, 3);
  m.kill(2, 1);  // layer 2 has ops {0, 2} alive
  Rng rng(99);
  const int trials = 30000;
  std::vector<std::vector<int>> counts(4, std::vector<int>(3, 0));
  for (int t = 0; t < trials; ++t) {
    Path p = sample_uniform(m, rng);
    REQUIRE(m.path_alive(p));
    for (int l = 0; l < 4; ++l) ++counts[size_t(l)][size_t(p[size_t(l)])];
  }
  CHECK(counts[2][1] == 0);
  // 3 sigma around the expected cell count for each alive slot
  for (int l = 0; l < 4; ++l) {
    int alive = m.alive_in_layer(l);
    double expect = double(trials) / alive;
    double sigma = std::sqrt(trials * (1.0 / alive) * (1.0 - 1.0 / alive));
    for (int c = 0; c < 3; ++c) {
      if (!m.get(l, c)) continue;
      CHECK(std::fabs(counts[size_t(l)][size_t(c)] - expect) < 3.0 * sigma);
    }
  }
}

TEST_CASE("uniform pair distance matches N(C-1)/C within 3 sigma") {
  CHECK(expected_hamming_uniform(12, 6) == doctest::Approx(10.0));
  CHECK(expected_hamming_uniform(12, 4) == doctest::Approx(9.0));
  CHECK(expected_hamming_uniform(1, 2) == doctest::Approx(0.5));

  const int N = 12, C = 6, trials = 20000;
  AliveMask m = AliveMask::all(N, C);
  Rng rng(7);
  double sum = 0.0, sum2 = 0.0;
  for (int t = 0; t < trials; ++t) {
    int d = hamming(sample_uniform(m, rng), sample_uniform(m, rng));
    sum += d;
    sum2 += double(d) * d;
  }
  double mean = sum / trials;
  double var = sum2 / trials - mean * mean;
  double sigma_mean = std::sqrt(var / trials);
  CHECK(std::fabs(mean - expected_hamming_uniform(N, C)) < 3.0 * sigma_mean);
}

TEST_CASE("gradual modification moves exactly k layers when not lazy") {
  const int N = 12, C = 6;
  AliveMask m = AliveMask::all(N, C);
  Rng rng(11);
  Path prev = sample_uniform(m, rng);
  for (int k : {1, 3, N}) {
    SamplerConfig cfg;
    cfg.mode = SamplerConfig::Mode::magic_t;
    cfg.k = k;
    cfg.lazy = false;
    for (int t = 0; t < 2000; ++t) {
      Path next = sample_magic_t(prev, m, cfg, rng);
      CHECK(hamming(prev, next) == k);
      REQUIRE(m.path_alive(next));
      prev = next;
    }
  }
}

TEST_CASE("lazy draws may keep the incumbent so distance is at most k") {
  const int N = 6, C = 4;
  AliveMask m = AliveMask::all(N, C);
  Rng rng(5);
  Path prev = sample_uniform(m, rng);
  SamplerConfig cfg;
  cfg.k = 3;
  cfg.lazy = true;
  const int trials = 20000;
  std::vector<int> hist(cfg.k + 1, 0);
  for (int t = 0; t < trials; ++t) {
    Path next = sample_magic_t(prev, m, cfg, rng);
    int d = hamming(prev, next);
    REQUIRE(d <= cfg.k);
    ++hist[size_t(d)];
    prev = next;
  }
  // each touched layer keeps its op with prob 1/C; d ~ Binomial(k, (C-1)/C)
  for (int d = 0; d <= cfg.k; ++d) {
    double binom = 1.0;
    for (int i = 0; i < d; ++i) binom = binom * (cfg.k - i) / (i + 1);
    double p = binom * std::pow((C - 1.0) / C, d) * std::pow(1.0 / C, cfg.k - d);
    double sigma = std::sqrt(trials * p * (1.0 - p));
    CHECK(std::fabs(hist[size_t(d)] - trials * p) < 4.0 * sigma);
  }
}

TEST_CASE("gradual modification respects a shrunk mask") {
  AliveMask m = AliveMask::all(4, 3);
  m.kill(1, 0);
  m.kill(1, 2);  // layer 1 pinned to op 1
  m.kill(3, 2);
  Rng rng(21);
  SamplerConfig cfg;
  cfg.k = 4;  // more than the eligible layer count; clamps to eligible
  cfg.lazy = false;
  Path prev{0, 1, 0, 0};
  for (int t = 0; t < 3000; ++t) {
    Path next = sample_magic_t(prev, m, cfg, rng);
    REQUIRE(m.path_alive(next));
    CHECK(next[1] == 1);                     // pinned layer never moves
    CHECK(hamming(prev, next) == 3);         // the three eligible layers all move
    prev = next;
  }
}

TEST_CASE("gradual modification rejects bad configurations") {
  AliveMask m = AliveMask::all(4, 3);
  Rng rng(1);
  SamplerConfig cfg;
  Path prev{0, 0, 0, 0};

  cfg.k = 0;
  CHECK_THROWS_WITH_AS(sample_magic_t(prev, m, cfg, rng), doctest::Contains("out of range"),
                       Error);
  cfg.k = 5;
  CHECK_THROWS_WITH_AS(sample_magic_t(prev, m, cfg, rng), doctest::Contains("out of range"),
                       Error);

  cfg.k = 1;
  CHECK_THROWS_WITH_AS(sample_magic_t({0, 0, 0}, m, cfg, rng),
                       doctest::Contains("not alive"), Error);  // wrong length
  m.kill(0, 0);
  CHECK_THROWS_WITH_AS(sample_magic_t(prev, m, cfg, rng), doctest::Contains("not alive"), Error);

  AliveMask two = AliveMask::all(4, 2);
  SamplerConfig strict;
  strict.k = 1;
  strict.lazy = false;
  CHECK_THROWS_WITH_AS(sample_magic_t({0, 0, 0, 0}, two, strict, rng),
                       doctest::Contains("lazy=true"), Error);
  strict.lazy = true;
  CHECK_NOTHROW(sample_magic_t({0, 0, 0, 0}, two, strict, rng));
}

TEST_CASE("single-step marginals of the strict walk are uniform over alternatives") {
  // from a fixed prev with k=1: layer chosen uniformly, op uniform over C-1 others
  const int N = 3, C = 4;
  AliveMask m = AliveMask::all(N, C);
  Rng rng(31);
  SamplerConfig cfg;
  cfg.k = 1;
  Path prev{0, 1, 2};
  const int trials = 30000;
  std::vector<int> layer_counts(N, 0);
  std::vector<std::vector<int>> op_counts(N, std::vector<int>(C, 0));
  for (int t = 0; t < trials; ++t) {
    Path next = sample_magic_t(prev, m, cfg, rng);
    for (int l = 0; l < N; ++l) {
      if (next[size_t(l)] == prev[size_t(l)]) continue;
      ++layer_counts[size_t(l)];
      ++op_counts[size_t(l)][size_t(next[size_t(l)])];
    }
  }
  for (int l = 0; l < N; ++l) {
    double p = 1.0 / N;
    double sigma = std::sqrt(trials * p * (1 - p));
    CHECK(std::fabs(layer_counts[size_t(l)] - trials * p) < 4.0 * sigma);
    CHECK(op_counts[size_t(l)][size_t(prev[size_t(l)])] == 0);
    for (int c = 0; c < C; ++c) {
      if (c == prev[size_t(l)]) continue;
      double pc = 1.0 / (N * (C - 1.0));
      double sc = std::sqrt(trials * pc * (1 - pc));
      CHECK(std::fabs(op_counts[size_t(l)][size_t(c)] - trials * pc) < 4.0 * sc);
    }
  }
}

TEST_CASE("sampler mode names") {
  CHECK(sampler_mode_name(SamplerConfig::Mode::uniform) == std::string("uniform"));
  CHECK(sampler_mode_name(SamplerConfig::Mode::magic_t) == std::string("magic_t"));
}
