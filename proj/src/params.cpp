#include "trajpred/params.hpp"

#include <cmath>

#include "trajpred/adam.hpp"
#include "trajpred/errors.hpp"

namespace trajpred::num {

Tensor& ParamStore::add(std::string name, Tensor init) {
  if (contains(name)) throw UsageError("ParamStore: duplicate parameter '" + name + "'");
  items_.push_back({std::move(name), std::move(init)});
  return items_.back().tensor;
}

int ParamStore::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < items_.size(); ++i)
    if (items_[i].name == name) return static_cast<int>(i);
  return -1;
}

bool ParamStore::contains(std::string_view name) const { return index_of(name) >= 0; }

Tensor& ParamStore::at(std::string_view name) {
  int i = index_of(name);
  if (i < 0) throw UsageError("ParamStore: unknown parameter '" + std::string(name) + "'");
  return items_[static_cast<std::size_t>(i)].tensor;
}

const Tensor& ParamStore::at(std::string_view name) const {
  int i = index_of(name);
  if (i < 0) throw UsageError("ParamStore: unknown parameter '" + std::string(name) + "'");
  return items_[static_cast<std::size_t>(i)].tensor;
}

GradStore::GradStore(const ParamStore& params) {
  grads_.reserve(params.count());
  for (const auto& item : params.items()) grads_.push_back(Tensor::zeros(item.tensor.shape));
}

void GradStore::accumulate(int index, const Tensor& grad, double scale) {
  Tensor& g = grads_[static_cast<std::size_t>(index)];
  require_same_shape(g, grad, "GradStore::accumulate");
  for (int i = 0; i < g.size(); ++i) g[i] += scale * grad[i];
}

void GradStore::reset() {
  for (Tensor& g : grads_)
    for (double& x : g.data) x = 0.0;
}

BoundParams bind_params(Tape& tape, const ParamStore& params) {
  BoundParams bound;
  bound.vars.reserve(params.count());
  for (const auto& item : params.items()) bound.vars.push_back(tape.leaf(item.tensor));
  return bound;
}

void collect_grads(const Tape& tape, const BoundParams& bound, GradStore& grads, double scale) {
  for (std::size_t i = 0; i < bound.vars.size(); ++i)
    if (tape.has_grad(bound.vars[i]))
      grads.accumulate(static_cast<int>(i), tape.grad(bound.vars[i]), scale);
}

Adam::Adam(const ParamStore& params, AdamConfig cfg) : cfg_(cfg) {
  m_.reserve(params.count());
  v_.reserve(params.count());
  for (const auto& item : params.items()) {
    m_.push_back(Tensor::zeros(item.tensor.shape));
    v_.push_back(Tensor::zeros(item.tensor.shape));
  }
}

void Adam::step(ParamStore& params, const GradStore& grads) {
  if (params.count() != m_.size() || grads.count() != m_.size())
    throw UsageError("Adam::step: store layout does not match optimizer state");
  ++step_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t p = 0; p < m_.size(); ++p) {
    auto& item = params.items()[p];
    const Tensor& g = grads.at(static_cast<int>(p));
    require_same_shape(item.tensor, g, "Adam::step");
    if (!g.all_finite())
      throw NumericError("Adam::step: non-finite gradient for parameter '" + item.name + "'");
    Tensor& m = m_[p];
    Tensor& v = v_[p];
    for (int i = 0; i < g.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      item.tensor[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

}  // namespace trajpred::num
