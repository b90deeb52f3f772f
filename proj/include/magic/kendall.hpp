#pragma once

#include <vector>

namespace magic {

// Kendall rank correlation, tau-b (tie-corrected): (P - Q) / sqrt((n0-n1)(n0-n2))
// with n0 = n(n-1)/2 and n1/n2 the tied-pair counts of each list. O(n log n)
// via merge-sort inversion counting. When one list is entirely tied the
// denominator vanishes; that degenerate correlation is defined as 0.
double kendall_tau(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace magic
