#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "trajpred/tensor.hpp"

namespace trajpred::num {

// Handle to a node on a Tape. Only meaningful together with the tape that
// produced it.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode computation record. Every primitive appends one node holding
// its output value, its parent ids and a backward closure that scatters the
// node's gradient into its parents. backward() replays the record in reverse.
//
// Parameters are registered with leaf(); inputs that never need gradients
// with constant(). A tape is built per forward pass and discarded; parameter
// tensors themselves live outside the tape.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value);      // differentiable leaf
  Var constant(Tensor value);  // non-differentiable leaf

  // --- elementwise ---
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var affine(Var a, double scale, double shift);  // scale*x + shift
  Var leaky_relu(Var a, double alpha);
  Var relu(Var a) { return leaky_relu(a, 0.0); }
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var exp(Var a);
  Var log(Var a);  // requires strictly positive input
  Var clamp(Var a, double lo, double hi);

  // --- linear algebra ---
  // {m,k} x {k,n} -> {m,n};  {m,k} x {k} -> {m}
  Var matmul(Var a, Var b);
  // transposed left operand: a{k,m}, b{k,n} -> {m,n};  b{k} -> {m}
  Var matmul_t(Var a, Var b);
  Var add_col_bias(Var a, Var b);      // {m,n} + b{m} per column
  Var add_channel_bias(Var a, Var b);  // {H,W,C} + b{C}

  // --- shape / assembly ---
  Var slice(Var a, int offset, int len);            // flat view copy
  Var col(Var a, int j);                            // column of {m,n} -> {m}
  Var concat(const std::vector<Var>& parts);        // 1-D concatenation
  Var reshape(Var a, Shape s);
  // Place vectors of length `depth` at flat cell indices of a rows x cols
  // grid; untouched cells are zero. Cell indices must be distinct.
  Var scatter_grid(const std::vector<std::pair<int, Var>>& cells, int rows, int cols, int depth);

  // --- reductions ---
  Var sum(Var a);          // -> {1}
  Var sum_squares(Var a);  // -> {1}
  Var row_mean(Var a);     // {m,n} -> {m}, mean over columns

  // --- softmax family ---
  Var softmax(Var a);      // {n}, max-subtracted
  Var log_softmax(Var a);  // {n}
  Var logsumexp(Var a);    // {n} -> {1}

  // --- convolution ---
  // input {H,W,Cin}, kernels {kh,kw,Cin,Cout}, stride 1, same-zero padding.
  // Cross-correlation with taps spaced `dilation` cells apart.
  Var dilated_conv2d(Var input, Var kernels, int dilation);

  // --- model-output heads ---
  // KL(rho || rho_hat_j) summed over units; rho_hat must lie in (0,1).
  Var kl_sparsity(Var rho_hat, double rho);
  // raw {5} -> (muX, muY, sigmaX, sigmaY, rho) with sigma = exp clamped to
  // >= sigma_min and rho = rho_bound * tanh.
  Var bvn_params(Var raw, double sigma_min = 1e-3, double rho_bound = 0.999);
  // log-density of the bivariate normal theta {5} at a fixed point (feet)
  Var bvn_log_pdf(Var theta, double px, double py);

  // --- gradients ---
  // Accumulates d(output)/d(leaf) for every differentiable node. `output`
  // must be a scalar node of this tape.
  void backward(Var output);

  const Tensor& value(Var v) const { return node(v).value; }
  const Tensor& grad(Var v) const;
  bool has_grad(Var v) const { return node(v).grad.size() > 0; }
  std::size_t node_count() const { return nodes_.size(); }

  // When enabled (default), every op output is scanned and a NumericError
  // names the op that produced a non-finite value.
  void set_check_finite(bool on) { check_finite_ = on; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // empty until backward touches it
    bool needs_grad = false;
    std::vector<int> parents;
    std::function<void(Tape&, const Node&)> back;
  };

  Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.id)]; }
  const Node& node(Var v) const { return nodes_[static_cast<std::size_t>(v.id)]; }
  Tensor& grad_buf(int id);  // lazily allocated, zero-initialized
  Var push(Tensor value, std::vector<int> parents, std::function<void(Tape&, const Node&)> back,
           const char* op);
  Var unary(Var a, Tensor out, std::function<void(Tape&, const Node&)> back, const char* op);

  std::vector<Node> nodes_;
  bool check_finite_ = true;
};

// --- LSTM cell -------------------------------------------------------------
// Weight layout: wx {4h, din}, wh {4h, h}, b {4h}; gate order i, f, o, g.
struct LstmVars {
  Var wx, wh, b;
  int hidden = 0;
};

// One step of the standard LSTM cell (sigmoid gates, tanh candidate).
std::pair<Var, Var> lstm_step(Tape& t, Var x, Var h, Var c, const LstmVars& p);

// Runs the cell over the columns of inputs {din, T} from zero state and
// returns the final hidden state {h}. The input projection is batched over
// all steps.
Var lstm_sequence(Tape& t, Var inputs, const LstmVars& p);

}  // namespace trajpred::num
