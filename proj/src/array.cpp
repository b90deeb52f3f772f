#include "magic/array.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "magic/error.hpp"

namespace magic {

int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) {
    MAGIC_CHECK(d >= 0, "negative dimension in shape ", shape_str(s));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

Array::Array(Shape s) : shape(std::move(s)), data(static_cast<size_t>(numel(shape)), 0.0) {}

Array::Array(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  MAGIC_CHECK(numel(shape) == static_cast<int64_t>(data.size()), "array data size ",
              data.size(), " does not match shape ", shape_str(shape));
}

Array Array::scalar(double v) { return Array({}, {v}); }

Array Array::full(Shape s, double v) {
  Array a(std::move(s));
  a.fill(v);
  return a;
}

double Array::item() const {
  MAGIC_CHECK(data.size() == 1, "item() on array of size ", data.size());
  return data[0];
}

bool Array::all_finite() const {
  // (v - v) == 0 fails for NaN and Inf; vectorizes, unlike std::isfinite
  double probe = 0.0;
  for (double v : data) probe += v - v;
  return probe == 0.0;
}

void Array::fill(double v) { std::fill(data.begin(), data.end(), v); }

bool operator==(const Array& a, const Array& b) {
  return a.shape == b.shape && a.data == b.data;
}

double max_abs_diff(const Array& a, const Array& b) {
  MAGIC_CHECK(a.same_shape(b), "max_abs_diff shape mismatch ", shape_str(a.shape), " vs ",
              shape_str(b.shape));
  double m = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::fabs(a.data[i] - b.data[i]));
  return m;
}

}  // namespace magic
