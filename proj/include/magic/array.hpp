#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace magic {

using Shape = std::vector<int>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major tensor of doubles. An empty shape is a scalar holding one
// element. All numerics in the toolkit run in double precision.
struct Array {
  Shape shape;
  std::vector<double> data;

  Array() = default;
  explicit Array(Shape s);
  Array(Shape s, std::vector<double> d);

  static Array scalar(double v);
  static Array full(Shape s, double v);

  int rank() const { return static_cast<int>(shape.size()); }
  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  double item() const;  // requires size() == 1
  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }

  bool same_shape(const Array& o) const { return shape == o.shape; }
  bool all_finite() const;
  void fill(double v);
};

// Exact element-wise equality (shapes and values).
bool operator==(const Array& a, const Array& b);
inline bool operator!=(const Array& a, const Array& b) { return !(a == b); }

double max_abs_diff(const Array& a, const Array& b);

}  // namespace magic
