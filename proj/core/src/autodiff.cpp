#include "modwatch/autodiff.hpp"

#include "modwatch/error.hpp"

namespace modwatch::nn {

Var Tape::constant(Tensor value) {
  nodes_.push_back({std::move(value), {}, {}, std::nullopt, false});
  return Var(nodes_.size() - 1);
}

Var Tape::parameter(std::size_t slot, Tensor value) {
  nodes_.push_back({std::move(value), {}, {}, slot, true});
  slot_count_ = std::max(slot_count_, slot + 1);
  return Var(nodes_.size() - 1);
}

std::vector<Var> Tape::bind(const ModelParameters& params) {
  std::vector<Var> vars;
  vars.reserve(params.slot_count());
  for (std::size_t s = 0; s < params.slot_count(); ++s) vars.push_back(parameter(s, params.tensor(s)));
  return vars;
}

Var Tape::record(Tensor value, bool requires_grad, Pullback pullback) {
  if (!value.all_finite()) throw NumericError("non-finite value produced in forward pass");
  nodes_.push_back({std::move(value), {}, requires_grad ? std::move(pullback) : Pullback{}, std::nullopt,
                    requires_grad});
  return Var(nodes_.size() - 1);
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id() >= nodes_.size()) throw std::out_of_range("variable does not belong to this tape");
  return nodes_[v.id()];
}

Tape::Node& Tape::node(Var v) {
  if (!v.valid() || v.id() >= nodes_.size()) throw std::out_of_range("variable does not belong to this tape");
  return nodes_[v.id()];
}

const Tensor& Tape::value(Var v) const { return node(v).value; }
bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

const Tensor& Tape::gradient(Var v) const { return node(v).grad; }

Tensor& Tape::accumulate(Var v) {
  auto& n = node(v);
  if (n.grad.empty()) n.grad = Tensor(n.value.dims());
  return n.grad;
}

Gradients Tape::backward(Var loss) {
  if (consumed_) throw std::logic_error("gradient tape already consumed by a previous backward pass");
  const auto& root = node(loss);
  if (root.value.size() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + shape_string(root.value.dims()));
  }
  consumed_ = true;

  Gradients grads(slot_count_);
  if (root.requires_grad) {
    accumulate(loss)[0] = 1.0f;
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      auto& n = nodes_[id];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (!n.grad.all_finite()) throw NumericError("non-finite gradient in backward pass");
      if (n.pullback) n.pullback(*this, Var(id));
    }
  }
  for (auto& n : nodes_) {
    if (!n.slot) continue;
    auto& g = grads[*n.slot];
    if (n.grad.empty()) {
      if (g.empty()) g = Tensor(n.value.dims());
      continue;
    }
    if (g.empty()) {
      g = std::move(n.grad);
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  }
  return grads;
}

}  // namespace modwatch::nn
