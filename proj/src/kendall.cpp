#include "magic/kendall.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "magic/error.hpp"

namespace magic {

namespace {

// counts strict inversions while merge-sorting v
int64_t count_inversions(std::vector<double>& v, std::vector<double>& tmp, size_t lo, size_t hi) {
  if (hi - lo < 2) return 0;
  size_t mid = lo + (hi - lo) / 2;
  int64_t inv = count_inversions(v, tmp, lo, mid) + count_inversions(v, tmp, mid, hi);
  size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      inv += static_cast<int64_t>(mid - i);
      tmp[k++] = v[j++];
    } else {
      tmp[k++] = v[i++];
    }
  }
  while (i < mid) tmp[k++] = v[i++];
  while (j < hi) tmp[k++] = v[j++];
  std::copy(tmp.begin() + static_cast<long>(lo), tmp.begin() + static_cast<long>(hi),
            v.begin() + static_cast<long>(lo));
  return inv;
}

int64_t tied_pairs(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  int64_t total = 0, run = 1;
  for (size_t i = 1; i <= v.size(); ++i) {
    if (i < v.size() && v[i] == v[i - 1]) {
      ++run;
    } else {
      total += run * (run - 1) / 2;
      run = 1;
    }
  }
  return total;
}

}  // namespace

double kendall_tau(const std::vector<double>& a, const std::vector<double>& b) {
  MAGIC_CHECK(a.size() == b.size(), "kendall_tau: length mismatch ", a.size(), " vs ", b.size());
  const int64_t n = static_cast<int64_t>(a.size());
  MAGIC_CHECK(n >= 2, "kendall_tau needs at least 2 observations, got ", n);

  std::vector<size_t> order(a.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t i, size_t j) {
    if (a[i] != a[j]) return a[i] < a[j];
    return b[i] < b[j];
  });

  const int64_t n0 = n * (n - 1) / 2;
  int64_t n1 = 0;   // pairs tied in a
  int64_t n3 = 0;   // pairs tied in both
  {
    int64_t run_a = 1, run_ab = 1;
    for (int64_t i = 1; i <= n; ++i) {
      bool end = i == n;
      bool same_a = !end && a[order[static_cast<size_t>(i)]] == a[order[static_cast<size_t>(i - 1)]];
      bool same_ab = same_a && b[order[static_cast<size_t>(i)]] == b[order[static_cast<size_t>(i - 1)]];
      if (same_a) ++run_a; else { n1 += run_a * (run_a - 1) / 2; run_a = 1; }
      if (same_ab) ++run_ab; else { n3 += run_ab * (run_ab - 1) / 2; run_ab = 1; }
    }
  }
  int64_t n2 = tied_pairs(b);

  std::vector<double> y(a.size()), tmp(a.size());
  for (size_t i = 0; i < order.size(); ++i) y[i] = b[order[i]];
  int64_t swaps = count_inversions(y, tmp, 0, y.size());

  // concordant minus discordant
  double num = static_cast<double>(n0 - n1 - n2 + n3 - 2 * swaps);
  double den = std::sqrt(static_cast<double>(n0 - n1)) * std::sqrt(static_cast<double>(n0 - n2));
  if (den == 0.0) return 0.0;  // a list entirely tied carries no ranking information
  return num / den;
}

}  // namespace magic
