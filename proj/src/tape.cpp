#include "trajpred/tape.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

namespace trajpred::num {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<EMat>;
using CMapM = Eigen::Map<const EMat>;

CMapM as_matrix(const Tensor& t, int rows, int cols) {
  return CMapM(t.data.data(), rows, cols);
}

MapM as_matrix(Tensor& t, int rows, int cols) { return MapM(t.data.data(), rows, cols); }

constexpr double kTwoPi = 6.28318530717958647692;

}  // namespace

Var Tape::push(Tensor value, std::vector<int> parents,
               std::function<void(Tape&, const Node&)> back, const char* op) {
  if (check_finite_ && !value.all_finite())
    throw NumericError(std::string(op) + ": produced non-finite values");
  Node n;
  n.value = std::move(value);
  n.parents = std::move(parents);
  for (int p : n.parents)
    if (nodes_[static_cast<std::size_t>(p)].needs_grad) n.needs_grad = true;
  if (n.needs_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::unary(Var a, Tensor out, std::function<void(Tape&, const Node&)> back, const char* op) {
  return push(std::move(out), {a.id}, std::move(back), op);
}

Var Tape::leaf(Tensor value) {
  if (check_finite_ && !value.all_finite()) throw NumericError("leaf: non-finite values");
  Node n;
  n.value = std::move(value);
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Tensor value) {
  if (check_finite_ && !value.all_finite()) throw NumericError("constant: non-finite values");
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::grad_buf(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0) n.grad = Tensor::zeros(n.value.shape);
  return n.grad;
}

const Tensor& Tape::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.size() == 0) throw UsageError("grad: node has no gradient (run backward first)");
  return n.grad;
}

void Tape::backward(Var output) {
  if (!output.valid() || output.id >= static_cast<int>(nodes_.size()))
    throw UsageError("backward: output is not a node of this record");
  if (node(output).value.size() != 1) throw UsageError("backward: output must be a scalar");
  grad_buf(output.id)[0] = 1.0;
  for (int i = output.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.needs_grad || n.grad.size() == 0 || !n.back) continue;
    n.back(*this, n);
  }
}

// --- elementwise -------------------------------------------------------------

Var Tape::add(Var a, Var b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  require_same_shape(va, vb, "add");
  Tensor out = va;
  for (int i = 0; i < out.size(); ++i) out[i] += vb[i];
  return push(std::move(out), {a.id, b.id},
              [](Tape& t, const Node& n) {
                for (int pi = 0; pi < 2; ++pi) {
                  if (!t.nodes_[static_cast<std::size_t>(n.parents[pi])].needs_grad) continue;
                  Tensor& g = t.grad_buf(n.parents[static_cast<std::size_t>(pi)]);
                  for (int i = 0; i < g.size(); ++i) g[i] += n.grad[i];
                }
              },
              "add");
}

Var Tape::sub(Var a, Var b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  require_same_shape(va, vb, "sub");
  Tensor out = va;
  for (int i = 0; i < out.size(); ++i) out[i] -= vb[i];
  return push(std::move(out), {a.id, b.id},
              [](Tape& t, const Node& n) {
                if (t.nodes_[static_cast<std::size_t>(n.parents[0])].needs_grad) {
                  Tensor& ga = t.grad_buf(n.parents[0]);
                  for (int i = 0; i < ga.size(); ++i) ga[i] += n.grad[i];
                }
                if (t.nodes_[static_cast<std::size_t>(n.parents[1])].needs_grad) {
                  Tensor& gb = t.grad_buf(n.parents[1]);
                  for (int i = 0; i < gb.size(); ++i) gb[i] -= n.grad[i];
                }
              },
              "sub");
}

Var Tape::mul(Var a, Var b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  require_same_shape(va, vb, "mul");
  Tensor out = va;
  for (int i = 0; i < out.size(); ++i) out[i] *= vb[i];
  return push(std::move(out), {a.id, b.id},
              [](Tape& t, const Node& n) {
                const Tensor& va = t.nodes_[static_cast<std::size_t>(n.parents[0])].value;
                const Tensor& vb = t.nodes_[static_cast<std::size_t>(n.parents[1])].value;
                if (t.nodes_[static_cast<std::size_t>(n.parents[0])].needs_grad) {
                  Tensor& ga = t.grad_buf(n.parents[0]);
                  for (int i = 0; i < ga.size(); ++i) ga[i] += n.grad[i] * vb[i];
                }
                if (t.nodes_[static_cast<std::size_t>(n.parents[1])].needs_grad) {
                  Tensor& gb = t.grad_buf(n.parents[1]);
                  for (int i = 0; i < gb.size(); ++i) gb[i] += n.grad[i] * va[i];
                }
              },
              "mul");
}

Var Tape::affine(Var a, double scale, double shift) {
  Tensor out = value(a);
  for (double& x : out.data) x = scale * x + shift;
  return unary(a, std::move(out),
               [scale](Tape& t, const Node& n) {
                 Tensor& ga = t.grad_buf(n.parents[0]);
                 for (int i = 0; i < ga.size(); ++i) ga[i] += scale * n.grad[i];
               },
               "affine");
}

Var Tape::leaky_relu(Var a, double alpha) {
  if (alpha < 0.0 || alpha >= 1.0) throw UsageError("leaky_relu: alpha must be in [0,1)");
  Tensor out = value(a);
  for (double& x : out.data) x = x > 0.0 ? x : alpha * x;
  return unary(a, std::move(out),
               [alpha](Tape& t, const Node& n) {
                 const Tensor& va = t.nodes_[static_cast<std::size_t>(n.parents[0])].value;
                 Tensor& ga = t.grad_buf(n.parents[0]);
                 // subgradient at 0 is alpha
                 for (int i = 0; i < ga.size(); ++i)
                   ga[i] += n.grad[i] * (va[i] > 0.0 ? 1.0 : alpha);
               },
               "leaky_relu");
}

Var Tape::sigmoid(Var a) {
  Tensor out = value(a);
  for (double& x : out.data) x = 1.0 / (1.0 + std::exp(-x));
  return unary(a, std::move(out),
               [](Tape& t, const Node& n) {
                 Tensor& ga = t.grad_buf(n.parents[0]);
                 for (int i = 0; i < ga.size(); ++i) {
                   double s = n.value[i];
                   ga[i] += n.grad[i] * s * (1.0 - s);
                 }
               },
               "sigmoid");
}

Var Tape::tanh(Var a) {
  Tensor out = value(a);
  for (double& x : out.data) x = std::tanh(x);
  return unary(a, std::move(out),
               [](Tape& t, const Node& n) {
                 Tensor& ga = t.grad_buf(n.parents[0]);
                 for (int i = 0; i < ga.size(); ++i) {
                   double y = n.value[i];
                   ga[i] += n.grad[i] * (1.0 - y * y);
                 }
               },
               "tanh");
}

Var Tape::exp(Var a) {
  Tensor out = value(a);
  for (double& x : out.data) x = std::exp(x);
  return unary(a, std::move(out),
               [](Tape& t, const Node& n) {
                 Tensor& ga = t.grad_buf(n.parents[0]);
                 for (int i = 0; i < ga.size(); ++i) ga[i] += n.grad[i] * n.value[i];
               },
               "exp");
}

Var Tape::log(Var a) {
  const Tensor& va = value(a);
  Tensor out = va;
  for (double& x : out.data) {
    if (x <= 0.0) throw NumericError("log: input must be strictly positive");
    x = std::log(x);
  }
  return unary(a, std::move(out),
               [](Tape& t, const Node& n) {
                 const Tensor& va = t.nodes_[static_cast<std::size_t>(n.parents[0])].value;
                 Tensor& ga = t.grad_buf(n.parents[0]);
                 for (int i = 0; i < ga.size(); ++i) ga[i] += n.grad[i] / va[i];
               },
               "log");
}

Var Tape::clamp(Var a, double lo, double hi) {
  if (lo > hi) throw UsageError("clamp: lo > hi");
  Tensor out = value(a);
  for (double& x : out.data) x = std::min(std::max(x, lo), hi);
  return unary(a, std::move(out),
               [lo, hi](Tape& t, const Node& n) {
                 const Tensor& va = t.nodes_[static_cast<std::size_t>(n.parents[0])].value;
                 Tensor& ga = t.grad_buf(n.parents[0]);
                 for (int i = 0; i < ga.size(); ++i)
                   if (va[i] > lo && va[i] < hi) ga[i] += n.grad[i];
               },
               "clamp");
}

// --- linear algebra ----------------------------------------------------------

Var Tape::matmul(Var a, Var b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (va.rank() != 2) throw DimensionError("matmul: lhs must be rank 2, got " + va.shape_str());
  bool vec_rhs = vb.rank() == 1;
  if (!vec_rhs && vb.rank() != 2)
    throw DimensionError("matmul: rhs must be rank 1 or 2, got " + vb.shape_str());
  int m = va.dim(0), k = va.dim(1);
  int k2 = vb.dim(0);
  int n = vec_rhs ? 1 : vb.dim(1);
  if (k != k2)
    throw DimensionError("matmul: inner extents disagree, " + va.shape_str() + " x " +
                         vb.shape_str());
  Tensor out(vec_rhs ? Shape{m} : Shape{m, n});
  as_matrix(out, m, n).noalias() = as_matrix(va, m, k) * as_matrix(vb, k, n);
  return push(std::move(out), {a.id, b.id},
              [m, k, n](Tape& t, const Node& nd) {
                const Tensor& va = t.nodes_[static_cast<std::size_t>(nd.parents[0])].value;
                const Tensor& vb = t.nodes_[static_cast<std::size_t>(nd.parents[1])].value;
                auto g = as_matrix(nd.grad, m, n);
                if (t.nodes_[static_cast<std::size_t>(nd.parents[0])].needs_grad) {
                  auto ga = as_matrix(t.grad_buf(nd.parents[0]), m, k);
                  ga.noalias() += g * as_matrix(vb, k, n).transpose();
                }
                if (t.nodes_[static_cast<std::size_t>(nd.parents[1])].needs_grad) {
                  auto gb = as_matrix(t.grad_buf(nd.parents[1]), k, n);
                  gb.noalias() += as_matrix(va, m, k).transpose() * g;
                }
              },
              "matmul");
}

Var Tape::matmul_t(Var a, Var b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (va.rank() != 2) throw DimensionError("matmul_t: lhs must be rank 2, got " + va.shape_str());
  bool vec_rhs = vb.rank() == 1;
  if (!vec_rhs && vb.rank() != 2)
    throw DimensionError("matmul_t: rhs must be rank 1 or 2, got " + vb.shape_str());
  int k = va.dim(0), m = va.dim(1);
  int k2 = vb.dim(0);
  int n = vec_rhs ? 1 : vb.dim(1);
  if (k != k2)
    throw DimensionError("matmul_t: inner extents disagree, " + va.shape_str() + "^T x " +
                         vb.shape_str());
  Tensor out(vec_rhs ? Shape{m} : Shape{m, n});
  as_matrix(out, m, n).noalias() = as_matrix(va, k, m).transpose() * as_matrix(vb, k, n);
  return push(std::move(out), {a.id, b.id},
              [m, k, n](Tape& t, const Node& nd) {
                const Tensor& va = t.nodes_[static_cast<std::size_t>(nd.parents[0])].value;
                const Tensor& vb = t.nodes_[static_cast<std::size_t>(nd.parents[1])].value;
                auto g = as_matrix(nd.grad, m, n);
                if (t.nodes_[static_cast<std::size_t>(nd.parents[0])].needs_grad) {
                  auto ga = as_matrix(t.grad_buf(nd.parents[0]), k, m);
                  ga.noalias() += as_matrix(vb, k, n) * g.transpose();
                }
                if (t.nodes_[static_cast<std::size_t>(nd.parents[1])].needs_grad) {
                  auto gb = as_matrix(t.grad_buf(nd.parents[1]), k, n);
                  gb.noalias() += as_matrix(va, k, m) * g;
                }
              },
              "matmul_t");
}

Var Tape::add_col_bias(Var a, Var b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (va.rank() != 2 || vb.rank() != 1 || vb.dim(0) != va.dim(0))
    throw DimensionError("add_col_bias: need {m,n} and {m}, got " + va.shape_str() + " and " +
                         vb.shape_str());
  int m = va.dim(0), n = va.dim(1);
  Tensor out = va;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(i, j) += vb[i];
  return push(std::move(out), {a.id, b.id},
              [m, n](Tape& t, const Node& nd) {
                if (t.nodes_[static_cast<std::size_t>(nd.parents[0])].needs_grad) {
                  Tensor& ga = t.grad_buf(nd.parents[0]);
                  for (int i = 0; i < ga.size(); ++i) ga[i] += nd.grad[i];
                }
                if (t.nodes_[static_cast<std::size_t>(nd.parents[1])].needs_grad) {
                  Tensor& gb = t.grad_buf(nd.parents[1]);
                  for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) gb[i] += nd.grad.at(i, j);
                }
              },
              "add_col_bias");
}

Var Tape::add_channel_bias(Var a, Var b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (va.rank() != 3 || vb.rank() != 1 || vb.dim(0) != va.dim(2))
    throw DimensionError("add_channel_bias: need {h,w,c} and {c}, got " + va.shape_str() +
                         " and " + vb.shape_str());
  int hw = va.dim(0) * va.dim(1), c = va.dim(2);
  Tensor out = va;
  for (int p = 0; p < hw; ++p)
    for (int ch = 0; ch < c; ++ch) out[p * c + ch] += vb[ch];
  return push(std::move(out), {a.id, b.id},
              [hw, c](Tape& t, const Node& nd) {
                if (t.nodes_[static_cast<std::size_t>(nd.parents[0])].needs_grad) {
                  Tensor& ga = t.grad_buf(nd.parents[0]);
                  for (int i = 0; i < ga.size(); ++i) ga[i] += nd.grad[i];
                }
                if (t.nodes_[static_cast<std::size_t>(nd.parents[1])].needs_grad) {
                  Tensor& gb = t.grad_buf(nd.parents[1]);
                  for (int p = 0; p < hw; ++p)
                    for (int ch = 0; ch < c; ++ch) gb[ch] += nd.grad[p * c + ch];
                }
              },
              "add_channel_bias");
}

// --- shape / assembly --------------------------------------------------------

Var Tape::slice(Var a, int offset, int len) {
  const Tensor& va = value(a);
  if (offset < 0 || len <= 0 || offset + len > va.size())
    throw DimensionError("slice: range out of bounds");
  Tensor out({len});
  std::copy(va.data.begin() + offset, va.data.begin() + offset + len, out.data.begin());
  return unary(a, std::move(out),
               [offset, len](Tape& t, const Node& n) {
                 Tensor& ga = t.grad_buf(n.parents[0]);
                 for (int i = 0; i < len; ++i) ga[offset + i] += n.grad[i];
               },
               "slice");
}

Var Tape::col(Var a, int j) {
  const Tensor& va = value(a);
  if (va.rank() != 2) throw DimensionError("col: need rank-2 tensor");
  int m = va.dim(0), n = va.dim(1);
  if (j < 0 || j >= n) throw DimensionError("col: column index out of range");
  Tensor out({m});
  for (int i = 0; i < m; ++i) out[i] = va.at(i, j);
  return unary(a, std::move(out),
               [j, n](Tape& t, const Node& nd) {
                 Tensor& ga = t.grad_buf(nd.parents[0]);
                 for (int i = 0; i < nd.grad.size(); ++i) ga[i * n + j] += nd.grad[i];
               },
               "col");
}

Var Tape::concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw UsageError("concat: no parts");
  int total = 0;
  std::vector<int> ids;
  std::vector<int> lens;
  for (Var p : parts) {
    const Tensor& v = value(p);
    if (v.rank() != 1) throw DimensionError("concat: parts must be rank 1");
    total += v.size();
    ids.push_back(p.id);
    lens.push_back(v.size());
  }
  Tensor out({total});
  int off = 0;
  for (Var p : parts) {
    const Tensor& v = value(p);
    std::copy(v.data.begin(), v.data.end(), out.data.begin() + off);
    off += v.size();
  }
  return push(std::move(out), ids,
              [lens](Tape& t, const Node& n) {
                int off = 0;
                for (std::size_t pi = 0; pi < n.parents.size(); ++pi) {
                  int len = lens[pi];
                  if (t.nodes_[static_cast<std::size_t>(n.parents[pi])].needs_grad) {
                    Tensor& g = t.grad_buf(n.parents[pi]);
                    for (int i = 0; i < len; ++i) g[i] += n.grad[off + i];
                  }
                  off += len;
                }
              },
              "concat");
}

Var Tape::reshape(Var a, Shape s) {
  const Tensor& va = value(a);
  if (shape_size(s) != va.size())
    throw DimensionError("reshape: size mismatch " + va.shape_str() + " -> " + num::shape_str(s));
  Tensor out = va;
  out.shape = std::move(s);
  return unary(a, std::move(out),
               [](Tape& t, const Node& n) {
                 Tensor& ga = t.grad_buf(n.parents[0]);
                 for (int i = 0; i < ga.size(); ++i) ga[i] += n.grad[i];
               },
               "reshape");
}

Var Tape::scatter_grid(const std::vector<std::pair<int, Var>>& cells, int rows, int cols,
                       int depth) {
  Tensor out({rows, cols, depth});
  std::vector<int> ids;
  std::vector<int> offsets;
  std::set<int> seen;
  for (const auto& [cell, var] : cells) {
    if (cell < 0 || cell >= rows * cols) throw DimensionError("scatter_grid: cell out of range");
    if (!seen.insert(cell).second) throw UsageError("scatter_grid: duplicate cell index");
    const Tensor& v = value(var);
    if (v.size() != depth || v.rank() != 1)
      throw DimensionError("scatter_grid: cell vector must have shape {depth}");
    std::copy(v.data.begin(), v.data.end(), out.data.begin() + cell * depth);
    ids.push_back(var.id);
    offsets.push_back(cell * depth);
  }
  return push(std::move(out), ids,
              [offsets, depth](Tape& t, const Node& n) {
                for (std::size_t pi = 0; pi < n.parents.size(); ++pi) {
                  if (!t.nodes_[static_cast<std::size_t>(n.parents[pi])].needs_grad) continue;
                  Tensor& g = t.grad_buf(n.parents[pi]);
                  for (int i = 0; i < depth; ++i) g[i] += n.grad[offsets[pi] + i];
                }
              },
              "scatter_grid");
}

// --- reductions ----------------------------------------------------------------

Var Tape::sum(Var a) {
  const Tensor& va = value(a);
  double s = 0.0;
  for (double x : va.data) s += x;
  return unary(a, Tensor::scalar(s),
               [](Tape& t, const Node& n) {
                 Tensor& ga = t.grad_buf(n.parents[0]);
                 for (int i = 0; i < ga.size(); ++i) ga[i] += n.grad[0];
               },
               "sum");
}

Var Tape::sum_squares(Var a) {
  const Tensor& va = value(a);
  double s = 0.0;
  for (double x : va.data) s += x * x;
  return unary(a, Tensor::scalar(s),
               [](Tape& t, const Node& n) {
                 const Tensor& va = t.nodes_[static_cast<std::size_t>(n.parents[0])].value;
                 Tensor& ga = t.grad_buf(n.parents[0]);
                 for (int i = 0; i < ga.size(); ++i) ga[i] += 2.0 * va[i] * n.grad[0];
               },
               "sum_squares");
}

Var Tape::row_mean(Var a) {
  const Tensor& va = value(a);
  if (va.rank() != 2) throw DimensionError("row_mean: need rank-2 tensor");
  int m = va.dim(0), n = va.dim(1);
  Tensor out({m});
  for (int i = 0; i < m; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += va.at(i, j);
    out[i] = s / n;
  }
  return unary(a, std::move(out),
               [m, n](Tape& t, const Node& nd) {
                 Tensor& ga = t.grad_buf(nd.parents[0]);
                 for (int i = 0; i < m; ++i)
                   for (int j = 0; j < n; ++j) ga.at(i, j) += nd.grad[i] / n;
               },
               "row_mean");
}

// --- softmax family ------------------------------------------------------------

Var Tape::softmax(Var a) {
  const Tensor& va = value(a);
  if (va.rank() != 1 || va.size() < 1) throw DimensionError("softmax: need nonempty vector");
  Tensor out = va;
  double mx = *std::max_element(out.data.begin(), out.data.end());
  double z = 0.0;
  for (double& x : out.data) {
    x = std::exp(x - mx);
    z += x;
  }
  for (double& x : out.data) x /= z;
  return unary(a, std::move(out),
               [](Tape& t, const Node& n) {
                 Tensor& ga = t.grad_buf(n.parents[0]);
                 double dot = 0.0;
                 for (int i = 0; i < n.value.size(); ++i) dot += n.grad[i] * n.value[i];
                 for (int i = 0; i < ga.size(); ++i) ga[i] += n.value[i] * (n.grad[i] - dot);
               },
               "softmax");
}

Var Tape::log_softmax(Var a) {
  const Tensor& va = value(a);
  if (va.rank() != 1 || va.size() < 1) throw DimensionError("log_softmax: need nonempty vector");
  Tensor out = va;
  double mx = *std::max_element(out.data.begin(), out.data.end());
  double z = 0.0;
  for (double x : out.data) z += std::exp(x - mx);
  double lse = mx + std::log(z);
  for (double& x : out.data) x -= lse;
  return unary(a, std::move(out),
               [](Tape& t, const Node& n) {
                 Tensor& ga = t.grad_buf(n.parents[0]);
                 double gsum = 0.0;
                 for (int i = 0; i < n.grad.size(); ++i) gsum += n.grad[i];
                 for (int i = 0; i < ga.size(); ++i)
                   ga[i] += n.grad[i] - std::exp(n.value[i]) * gsum;
               },
               "log_softmax");
}

Var Tape::logsumexp(Var a) {
  const Tensor& va = value(a);
  if (va.rank() != 1 || va.size() < 1) throw DimensionError("logsumexp: need nonempty vector");
  double mx = *std::max_element(va.data.begin(), va.data.end());
  double z = 0.0;
  for (double x : va.data) z += std::exp(x - mx);
  double lse = mx + std::log(z);
  return unary(a, Tensor::scalar(lse),
               [](Tape& t, const Node& n) {
                 const Tensor& va = t.nodes_[static_cast<std::size_t>(n.parents[0])].value;
                 Tensor& ga = t.grad_buf(n.parents[0]);
                 for (int i = 0; i < ga.size(); ++i)
                   ga[i] += n.grad[0] * std::exp(va[i] - n.value[0]);
               },
               "logsumexp");
}

// --- convolution -----------------------------------------------------------------

Var Tape::dilated_conv2d(Var input, Var kernels, int dilation) {
  const Tensor& x = value(input);
  const Tensor& k = value(kernels);
  if (x.rank() != 3) throw DimensionError("dilated_conv2d: input must be {H,W,Cin}");
  if (k.rank() != 4) throw DimensionError("dilated_conv2d: kernels must be {kh,kw,Cin,Cout}");
  if (dilation < 1) throw UsageError("dilated_conv2d: dilation must be >= 1");
  int H = x.dim(0), W = x.dim(1), ci = x.dim(2);
  int kh = k.dim(0), kw = k.dim(1), co = k.dim(3);
  if (k.dim(2) != ci)
    throw DimensionError("dilated_conv2d: kernel Cin " + std::to_string(k.dim(2)) +
                         " != input Cin " + std::to_string(ci));
  int ph = (kh - 1) * dilation / 2;
  int pw = (kw - 1) * dilation / 2;
  if ((kh - 1) * dilation + 1 > H + 2 * ph || (kw - 1) * dilation + 1 > W + 2 * pw)
    throw DimensionError("dilated_conv2d: effective kernel span exceeds padded input");
  Tensor out({H, W, co});
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j)
      for (int u = 0; u < kh; ++u) {
        int ii = i - ph + u * dilation;
        if (ii < 0 || ii >= H) continue;
        for (int v = 0; v < kw; ++v) {
          int jj = j - pw + v * dilation;
          if (jj < 0 || jj >= W) continue;
          for (int c = 0; c < ci; ++c) {
            double xv = x.at3(ii, jj, c);
            if (xv == 0.0) continue;
            const double* kp = &k.data[static_cast<std::size_t>(((u * kw + v) * ci + c) * co)];
            double* op = &out.data[static_cast<std::size_t>((i * W + j) * co)];
            for (int o = 0; o < co; ++o) op[o] += xv * kp[o];
          }
        }
      }
  return push(std::move(out), {input.id, kernels.id},
              [H, W, ci, kh, kw, co, ph, pw, dilation](Tape& t, const Node& nd) {
                const Tensor& x = t.nodes_[static_cast<std::size_t>(nd.parents[0])].value;
                const Tensor& k = t.nodes_[static_cast<std::size_t>(nd.parents[1])].value;
                bool need_x = t.nodes_[static_cast<std::size_t>(nd.parents[0])].needs_grad;
                bool need_k = t.nodes_[static_cast<std::size_t>(nd.parents[1])].needs_grad;
                Tensor* gx = need_x ? &t.grad_buf(nd.parents[0]) : nullptr;
                Tensor* gk = need_k ? &t.grad_buf(nd.parents[1]) : nullptr;
                for (int i = 0; i < H; ++i)
                  for (int j = 0; j < W; ++j)
                    for (int u = 0; u < kh; ++u) {
                      int ii = i - ph + u * dilation;
                      if (ii < 0 || ii >= H) continue;
                      for (int v = 0; v < kw; ++v) {
                        int jj = j - pw + v * dilation;
                        if (jj < 0 || jj >= W) continue;
                        const double* gp =
                            &nd.grad.data[static_cast<std::size_t>((i * W + j) * co)];
                        for (int c = 0; c < ci; ++c) {
                          std::size_t koff = static_cast<std::size_t>(((u * kw + v) * ci + c) * co);
                          double xv = x.at3(ii, jj, c);
                          if (need_x) {
                            double s = 0.0;
                            for (int o = 0; o < co; ++o) s += gp[o] * k.data[koff + o];
                            gx->at3(ii, jj, c) += s;
                          }
                          if (need_k && xv != 0.0) {
                            double* gkp = &gk->data[koff];
                            for (int o = 0; o < co; ++o) gkp[o] += gp[o] * xv;
                          }
                        }
                      }
                    }
              },
              "dilated_conv2d");
}

// --- model-output heads ------------------------------------------------------------

Var Tape::kl_sparsity(Var rho_hat, double rho) {
  const Tensor& v = value(rho_hat);
  if (rho <= 0.0 || rho >= 1.0) throw UsageError("kl_sparsity: rho must be in (0,1)");
  double pen = 0.0;
  for (double r : v.data) {
    if (r <= 0.0 || r >= 1.0)
      throw NumericError("kl_sparsity: mean activations must be in (0,1); clamp first");
    pen += rho * std::log(rho / r) + (1.0 - rho) * std::log((1.0 - rho) / (1.0 - r));
  }
  return unary(rho_hat, Tensor::scalar(pen),
               [rho](Tape& t, const Node& n) {
                 const Tensor& v = t.nodes_[static_cast<std::size_t>(n.parents[0])].value;
                 Tensor& g = t.grad_buf(n.parents[0]);
                 for (int i = 0; i < g.size(); ++i)
                   g[i] += n.grad[0] * (-rho / v[i] + (1.0 - rho) / (1.0 - v[i]));
               },
               "kl_sparsity");
}

Var Tape::bvn_params(Var raw, double sigma_min, double rho_bound) {
  const Tensor& v = value(raw);
  if (v.size() != 5 || v.rank() != 1) throw DimensionError("bvn_params: need raw vector {5}");
  Tensor out({5});
  out[0] = v[0];
  out[1] = v[1];
  out[2] = std::max(std::exp(v[2]), sigma_min);
  out[3] = std::max(std::exp(v[3]), sigma_min);
  out[4] = rho_bound * std::tanh(v[4]);
  return unary(raw, std::move(out),
               [sigma_min, rho_bound](Tape& t, const Node& n) {
                 const Tensor& v = t.nodes_[static_cast<std::size_t>(n.parents[0])].value;
                 Tensor& g = t.grad_buf(n.parents[0]);
                 g[0] += n.grad[0];
                 g[1] += n.grad[1];
                 for (int i = 2; i <= 3; ++i) {
                   double e = std::exp(v[i]);
                   if (e > sigma_min) g[i] += n.grad[i] * e;
                 }
                 double th = std::tanh(v[4]);
                 g[4] += n.grad[4] * rho_bound * (1.0 - th * th);
               },
               "bvn_params");
}

Var Tape::bvn_log_pdf(Var theta, double px, double py) {
  const Tensor& v = value(theta);
  if (v.size() != 5 || v.rank() != 1) throw DimensionError("bvn_log_pdf: need theta {5}");
  double sx = v[2], sy = v[3], rho = v[4];
  if (sx < 1e-3 || sy < 1e-3)
    throw NumericError("bvn_log_pdf: sigma below 1e-3 violates parameter invariant");
  if (std::abs(rho) > 0.999)
    throw NumericError("bvn_log_pdf: |rho| above 0.999 violates parameter invariant");
  double s = 1.0 - rho * rho;
  double A = (px - v[0]) / sx;
  double B = (py - v[1]) / sy;
  double z = A * A + B * B - 2.0 * rho * A * B;
  double lp = -std::log(kTwoPi * sx * sy) - 0.5 * std::log(s) - z / (2.0 * s);
  return unary(theta, Tensor::scalar(lp),
               [px, py](Tape& t, const Node& n) {
                 const Tensor& v = t.nodes_[static_cast<std::size_t>(n.parents[0])].value;
                 Tensor& g = t.grad_buf(n.parents[0]);
                 double sx = v[2], sy = v[3], rho = v[4];
                 double s = 1.0 - rho * rho;
                 double A = (px - v[0]) / sx;
                 double B = (py - v[1]) / sy;
                 double z = A * A + B * B - 2.0 * rho * A * B;
                 double g0 = n.grad[0];
                 g[0] += g0 * (A - rho * B) / (sx * s);
                 g[1] += g0 * (B - rho * A) / (sy * s);
                 g[2] += g0 * ((A * A - rho * A * B) / s - 1.0) / sx;
                 g[3] += g0 * ((B * B - rho * A * B) / s - 1.0) / sy;
                 g[4] += g0 * (rho / s + A * B / s - rho * z / (s * s));
               },
               "bvn_log_pdf");
}

// --- LSTM cell -----------------------------------------------------------------------

namespace {

std::pair<Var, Var> lstm_from_preact(Tape& t, Var pre, Var c, int h) {
  Var ifo = t.sigmoid(t.slice(pre, 0, 3 * h));
  Var g = t.tanh(t.slice(pre, 3 * h, h));
  Var i = t.slice(ifo, 0, h);
  Var f = t.slice(ifo, h, h);
  Var o = t.slice(ifo, 2 * h, h);
  Var c2 = t.add(t.mul(f, c), t.mul(i, g));
  Var h2 = t.mul(o, t.tanh(c2));
  return {h2, c2};
}

}  // namespace

std::pair<Var, Var> lstm_step(Tape& t, Var x, Var h, Var c, const LstmVars& p) {
  const Tensor& wx = t.value(p.wx);
  if (wx.rank() != 2 || wx.dim(0) != 4 * p.hidden)
    throw DimensionError("lstm_step: wx must be {4h, din}");
  if (t.value(h).size() != p.hidden || t.value(c).size() != p.hidden)
    throw DimensionError("lstm_step: state size mismatch");
  Var pre = t.add(t.add(t.matmul(p.wx, x), t.matmul(p.wh, h)), p.b);
  return lstm_from_preact(t, pre, c, p.hidden);
}

Var lstm_sequence(Tape& t, Var inputs, const LstmVars& p) {
  const Tensor& xs = t.value(inputs);
  if (xs.rank() != 2) throw DimensionError("lstm_sequence: inputs must be {din, T}");
  int steps = xs.dim(1);
  if (steps < 1) throw UsageError("lstm_sequence: empty sequence");
  Var proj = t.matmul(p.wx, inputs);  // {4h, T}
  Var h = t.constant(Tensor::zeros({p.hidden}));
  Var c = t.constant(Tensor::zeros({p.hidden}));
  for (int st = 0; st < steps; ++st) {
    Var pre = t.add(t.add(t.col(proj, st), t.matmul(p.wh, h)), p.b);
    auto [h2, c2] = lstm_from_preact(t, pre, c, p.hidden);
    h = h2;
    c = c2;
  }
  return h;
}

}  // namespace trajpred::num
