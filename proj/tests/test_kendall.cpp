#include <doctest.h>

#include <cmath>
#include <vector>

#include "magic/error.hpp"
#include "magic/kendall.hpp"
#include "magic/rng.hpp"

using namespace magic;

namespace {

// O(n^2) tau-b oracle straight from the pair definition
double tau_brute(const std::vector<double>& a, const std::vector<double>& b) {
  int64_t concordant = 0, discordant = 0, ties_a = 0, ties_b = 0;
  const size_t n = a.size();
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i + 1; j < n; ++j) {
      double da = a[i] - a[j], db = b[i] - b[j];
      if (da == 0 && db == 0) {
        ++ties_a;
        ++ties_b;
      } else if (da == 0) {
        ++ties_a;
      } else if (db == 0) {
        ++ties_b;
      } else if (da * db > 0) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  }
  int64_t n0 = int64_t(n) * (int64_t(n) - 1) / 2;
  double den = std::sqrt(double(n0 - ties_a)) * std::sqrt(double(n0 - ties_b));
  if (den == 0.0) return 0.0;
  return double(concordant - discordant) / den;
}

}  // namespace

TEST_CASE("kendall tau on hand-worked lists") {
  CHECK(kendall_tau({0.1, 0.3, 0.2}, {1, 2, 3}) == doctest::Approx(1.0 / 3.0));
  CHECK(kendall_tau({1, 2, 3, 4}, {1, 2, 3, 4}) == doctest::Approx(1.0));
  CHECK(kendall_tau({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(kendall_tau({1, 2, 3, 4}, {2, 1, 4, 3}) == doctest::Approx(1.0 / 3.0));
  // one tied pair in each list: n0=3, n1=n2=1, concordant 2
  CHECK(kendall_tau({1, 1, 2}, {3, 3, 5}) == doctest::Approx(1.0));
  CHECK(kendall_tau({1, 1, 2}, {5, 5, 3}) == doctest::Approx(-1.0));
  CHECK(kendall_tau({1, 1, 2}, {3, 5, 4}) == doctest::Approx(0.0));
}

TEST_CASE("degenerate and invalid inputs") {
  CHECK(kendall_tau({7, 7, 7, 7}, {1, 2, 3, 4}) == 0.0);  // no ranking information
  CHECK(kendall_tau({1, 2, 3, 4}, {5, 5, 5, 5}) == 0.0);
  CHECK(kendall_tau({2, 2}, {2, 2}) == 0.0);
  CHECK_THROWS_WITH_AS(kendall_tau({1, 2}, {1, 2, 3}), doctest::Contains("length mismatch"),
                       Error);
  CHECK_THROWS_WITH_AS(kendall_tau({1}, {1}), doctest::Contains("at least 2"), Error);
}

TEST_CASE("tau is invariant under strictly increasing transforms") {
  Rng rng(404);
  std::vector<double> a(40), b(40);
  for (auto& v : a) v = std::floor(rng.uniform() * 10);  // plenty of ties
  for (auto& v : b) v = rng.normal();
  double base = kendall_tau(a, b);
  std::vector<double> a2(a.size()), b2(b.size());
  for (size_t i = 0; i < a.size(); ++i) a2[i] = std::exp(a[i]);
  for (size_t i = 0; i < b.size(); ++i) b2[i] = b[i] * b[i] * b[i] + 2.0 * b[i];
  CHECK(kendall_tau(a2, b2) == doctest::Approx(base).epsilon(1e-12));
  CHECK(kendall_tau(b, a) == doctest::Approx(base).epsilon(1e-12));  // symmetric
}

TEST_CASE("tau matches the quadratic oracle on random tied instances") {
  Rng rng(777);
  for (int trial = 0; trial < 1000; ++trial) {
    size_t n = 2 + size_t(rng.below(30));
    int levels_a = 1 + int(rng.below(8));  // few levels force many ties
    int levels_b = 1 + int(rng.below(8));
    std::vector<double> a(n), b(n);
    for (auto& v : a) v = double(rng.below(uint64_t(levels_a)));
    for (auto& v : b) v = double(rng.below(uint64_t(levels_b)));
    double fast = kendall_tau(a, b);
    double slow = tau_brute(a, b);
    CAPTURE(trial);
    CAPTURE(n);
    CHECK(fast == doctest::Approx(slow).epsilon(1e-12));
    CHECK(fast >= -1.0 - 1e-12);
    CHECK(fast <= 1.0 + 1e-12);
  }
  // continuous (tie-free) instances as well
  for (int trial = 0; trial < 200; ++trial) {
    size_t n = 2 + size_t(rng.below(64));
    std::vector<double> a(n), b(n);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    CHECK(kendall_tau(a, b) == doctest::Approx(tau_brute(a, b)).epsilon(1e-12));
  }
}
