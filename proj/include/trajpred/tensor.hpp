#pragma once

#include <cmath>
#include <initializer_list>
#include <string>
#include <vector>

#include "trajpred/errors.hpp"
#include "trajpred/rng.hpp"

namespace trajpred::num {

using Shape = std::vector<int>;

// Dense row-major tensor of doubles. Rank 1..4 in practice.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);

  static Tensor scalar(double v);
  static Tensor vec(std::vector<double> v);
  static Tensor matrix(int rows, int cols, std::vector<double> v);
  static Tensor zeros(Shape s) { return Tensor(std::move(s), 0.0); }
  static Tensor full(Shape s, double v) { return Tensor(std::move(s), v); }
  // i.i.d. uniform in [-bound, bound]
  static Tensor uniform(Shape s, double bound, Rng& rng);

  int size() const { return static_cast<int>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  double& operator[](int i) { return data[static_cast<std::size_t>(i)]; }
  double operator[](int i) const { return data[static_cast<std::size_t>(i)]; }

  // 2-D accessors, shape {rows, cols}
  double& at(int r, int c) { return data[static_cast<std::size_t>(r * shape[1] + c)]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r * shape[1] + c)]; }

  // 3-D accessors, shape {H, W, C}
  double& at3(int i, int j, int k) {
    return data[static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k)];
  }
  double at3(int i, int j, int k) const {
    return data[static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k)];
  }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  bool all_finite() const;
  std::string shape_str() const;
};

int shape_size(const Shape& s);
std::string shape_str(const Shape& s);

// Throws DimensionError unless both tensors have identical shapes.
void require_same_shape(const Tensor& a, const Tensor& b, const char* op);

}  // namespace trajpred::num
