#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace keyloco::autodiff {

// Shape mismatch or invalid configuration of an op.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// NaN/Inf produced by an op; carries the op id in the message.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// API misuse (e.g. backward on a non-scalar).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense row-major 2-D array. Vectors are 1 x n.
template <typename T>
struct Array {
  std::vector<int> shape;  // {rows, cols}
  std::vector<T> data;

  Array() : shape{0, 0} {}
  Array(int r, int c) : shape{r, c}, data(static_cast<size_t>(r) * c, T(0)) {
    if (r < 0 || c < 0) throw ShapeError("Array: negative dimension");
  }

  static Array zeros(int r, int c) { return Array(r, c); }

  static Array full(int r, int c, T v) {
    Array a(r, c);
    for (auto& x : a.data) x = v;
    return a;
  }

  static Array from(int r, int c, std::initializer_list<T> vals) {
    Array a(r, c);
    if (vals.size() != a.data.size()) throw ShapeError("Array::from: size mismatch");
    size_t i = 0;
    for (T v : vals) a.data[i++] = v;
    return a;
  }

  int rows() const { return shape[0]; }
  int cols() const { return shape[1]; }
  size_t size() const { return data.size(); }

  T& at(int r, int c) { return data[static_cast<size_t>(r) * shape[1] + c]; }
  T at(int r, int c) const { return data[static_cast<size_t>(r) * shape[1] + c]; }

  T& operator[](size_t i) { return data[i]; }
  T operator[](size_t i) const { return data[i]; }

  bool same_shape(const Array& o) const {
    return shape[0] == o.shape[0] && shape[1] == o.shape[1];
  }

  bool all_finite() const {
    for (T v : data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  void fill(T v) {
    for (auto& x : data) x = v;
  }

  std::string shape_str() const {
    return "[" + std::to_string(shape[0]) + "x" + std::to_string(shape[1]) + "]";
  }

  using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Eigen::Map<EMat> mat() { return Eigen::Map<EMat>(data.data(), shape[0], shape[1]); }
  Eigen::Map<const EMat> mat() const {
    return Eigen::Map<const EMat>(data.data(), shape[0], shape[1]);
  }
};

using Arrayf = Array<float>;
using Arrayd = Array<double>;

}  // namespace keyloco::autodiff
