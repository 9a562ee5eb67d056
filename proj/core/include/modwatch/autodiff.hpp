#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "modwatch/parameters.hpp"
#include "modwatch/tensor.hpp"

namespace modwatch::nn {

class Tape;

// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return id_ != npos; }

 private:
  friend class Tape;
  explicit Var(std::size_t id) : id_(id) {}
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::size_t id_ = npos;
};

// Records forward operations; backward() replays them in reverse and
// accumulates vector-Jacobian products. A tape is single-use.
class Tape {
 public:
  using Pullback = std::function<void(Tape&, Var self)>;

  Var constant(Tensor value);
  Var parameter(std::size_t slot, Tensor value);
  // Binds every parameter tensor as a leaf; index i of the result is slot i.
  std::vector<Var> bind(const ModelParameters& params);

  // Appends an op result. The pullback reads gradient(self) and adds into
  // accumulate(parent) for parents that require_grad().
  Var record(Tensor value, bool requires_grad, Pullback pullback);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  const Tensor& gradient(Var v) const;
  Tensor& accumulate(Var v);

  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

  // Seeds d(loss)/d(loss) = 1 and runs every pullback once. Returns the
  // gradient per bound parameter slot; slots that did not influence the
  // loss receive exact zeros.
  Gradients backward(Var loss);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Pullback pullback;
    std::optional<std::size_t> slot;
    bool requires_grad = false;
  };
  const Node& node(Var v) const;
  Node& node(Var v);

  std::vector<Node> nodes_;
  std::size_t slot_count_ = 0;
  bool consumed_ = false;
};

}  // namespace modwatch::nn
