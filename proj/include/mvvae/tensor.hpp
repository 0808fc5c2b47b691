#pragma once

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvvae {

// Dense row-major double tensor. Shapes are small vectors of ints; all math
// kernels operate on raw pointers and explicit dimensions.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), v(numel(shape), 0.0) {}
  Tensor(std::initializer_list<int> s) : Tensor(std::vector<int>(s)) {}

  static std::size_t numel(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) {
      if (d < 0) throw std::invalid_argument("tensor: negative dimension");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  std::size_t size() const { return v.size(); }
  double* data() { return v.data(); }
  const double* data() const { return v.data(); }
  double& operator[](std::size_t i) { return v[i]; }
  double operator[](std::size_t i) const { return v[i]; }

  void fill(double value) { std::fill(v.begin(), v.end(), value); }
  void zero() { fill(0.0); }

  int dim(std::size_t i) const { return shape.at(i); }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

}  // namespace mvvae
