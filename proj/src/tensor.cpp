#include "trajpred/tensor.hpp"

#include <sstream>

namespace trajpred::num {

int shape_size(const Shape& s) {
  int n = 1;
  for (int e : s) {
    if (e <= 0) throw DimensionError("tensor extent must be positive, got " + shape_str(s));
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "{";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "}";
  return os.str();
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)) {
  data.assign(static_cast<std::size_t>(shape_size(shape)), fill);
}

Tensor Tensor::scalar(double v) {
  Tensor t({1});
  t.data[0] = v;
  return t;
}

Tensor Tensor::vec(std::vector<double> v) {
  Tensor t;
  t.shape = {static_cast<int>(v.size())};
  t.data = std::move(v);
  if (t.data.empty()) throw DimensionError("vector tensor must be nonempty");
  return t;
}

Tensor Tensor::matrix(int rows, int cols, std::vector<double> v) {
  Tensor t;
  t.shape = {rows, cols};
  t.data = std::move(v);
  if (static_cast<int>(t.data.size()) != shape_size(t.shape))
    throw DimensionError("matrix data size does not match " + shape_str(t.shape));
  return t;
}

Tensor Tensor::uniform(Shape s, double bound, Rng& rng) {
  Tensor t(std::move(s));
  for (double& x : t.data) x = rng.uniform(-bound, bound);
  return t;
}

bool Tensor::all_finite() const {
  for (double x : data)
    if (!std::isfinite(x)) return false;
  return true;
}

std::string Tensor::shape_str() const { return num::shape_str(shape); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
}

}  // namespace trajpred::num
