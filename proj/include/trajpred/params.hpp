#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "trajpred/tape.hpp"
#include "trajpred/tensor.hpp"

namespace trajpred::num {

// Named parameter tensors in a fixed registration order. The order defines
// the optimizer state layout and the (deterministic) serialization order.
class ParamStore {
 public:
  struct Item {
    std::string name;
    Tensor tensor;
  };

  Tensor& add(std::string name, Tensor init);
  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;
  bool contains(std::string_view name) const;
  int index_of(std::string_view name) const;  // -1 if absent

  std::size_t count() const { return items_.size(); }
  std::vector<Item>& items() { return items_; }
  const std::vector<Item>& items() const { return items_; }

 private:
  std::vector<Item> items_;
};

// Same layout as a ParamStore; used to accumulate gradients over a batch.
class GradStore {
 public:
  explicit GradStore(const ParamStore& params);
  void accumulate(int index, const Tensor& grad, double scale);
  void reset();
  const Tensor& at(int index) const { return grads_[static_cast<std::size_t>(index)]; }
  std::size_t count() const { return grads_.size(); }

 private:
  std::vector<Tensor> grads_;
};

// Parameters registered on a tape for one forward pass, in store order.
struct BoundParams {
  std::vector<Var> vars;
  Var operator[](int index) const { return vars[static_cast<std::size_t>(index)]; }
};

BoundParams bind_params(Tape& tape, const ParamStore& params);

// Reads every leaf gradient off the tape into the grad store (scaled, for
// batch averaging). Parameters untouched by the loss contribute zero.
void collect_grads(const Tape& tape, const BoundParams& bound, GradStore& grads, double scale);

}  // namespace trajpred::num
