#pragma once

#include <cassert>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

namespace slotgen {

using real = double;

// Dense row-major tensor. Shapes are small (rank <= 4 in practice), data is
// contiguous. All numeric state in the project lives in these.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape_in) : shape(std::move(shape_in)) {
    v.assign(static_cast<size_t>(numel_of(shape)), real(0));
  }
  Tensor(std::vector<int> shape_in, std::vector<real> data)
      : shape(std::move(shape_in)), v(std::move(data)) {
    assert(static_cast<int64_t>(v.size()) == numel_of(shape));
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, real value) {
    Tensor t(std::move(shape));
    std::fill(t.v.begin(), t.v.end(), value);
    return t;
  }
  static Tensor scalar(real value) { return Tensor({1}, {value}); }

  static int64_t numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(v.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i < 0 ? i + ndim() : i)]; }

  real* data() { return v.data(); }
  const real* data() const { return v.data(); }

  real& operator[](int64_t i) { return v[static_cast<size_t>(i)]; }
  real operator[](int64_t i) const { return v[static_cast<size_t>(i)]; }

  real& at(int i, int j) { return v[static_cast<size_t>(i) * shape[1] + j]; }
  real at(int i, int j) const { return v[static_cast<size_t>(i) * shape[1] + j]; }
  real& at(int i, int j, int k) {
    return v[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  real at(int i, int j, int k) const {
    return v[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  real& at(int i, int j, int k, int l) {
    return v[((static_cast<size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }
  real at(int i, int j, int k, int l) const {
    return v[((static_cast<size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  Tensor reshaped(std::vector<int> new_shape) const {
    assert(numel_of(new_shape) == numel());
    Tensor t;
    t.shape = std::move(new_shape);
    t.v = v;
    return t;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }

  std::vector<int> shape;
  std::vector<real> v;
};

}  // namespace slotgen
