#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tased/tensor.hpp"

namespace tased {

/// A trainable tensor. `grad` accumulates across backward passes until
/// zero_grad(); momentum buffers live in the optimizer, keyed by `name`.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string name, Tensor value);
  void zero_grad();
};

namespace detail {
struct Node;
}

/// Handle to a value recorded on a Tape. Copies share the same node.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  bool valid() const { return node_ != nullptr; }

 private:
  friend class Tape;
  friend class BackwardContext;
  explicit Var(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// What an operator's backward closure sees: its own output, the incoming
/// gradient, its inputs, and lazily-zeroed gradient slots for the inputs that
/// require one.
class BackwardContext {
 public:
  const Tensor& output() const;
  const Tensor& grad_output() const;
  const Tensor& input(std::size_t i) const;
  std::size_t input_count() const;
  bool wants(std::size_t i) const;
  Tensor& grad_input(std::size_t i);

 private:
  friend class Tape;
  explicit BackwardContext(detail::Node& node) : node_(node) {}
  detail::Node& node_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

/// Records operators in execution order so a reverse sweep can apply each
/// operator's hand-written backward. When disabled (inference), nothing is
/// retained and intermediate values are freed as soon as their Var dies.
///
/// A tape is confined to a single thread.
class Tape {
 public:
  explicit Tape(bool enabled = true) : enabled_(enabled) {}

  bool enabled() const { return enabled_; }

  Var constant(Tensor value);
  /// Leaf that requires a gradient (for checks against inputs).
  Var variable(Tensor value);
  /// Leaf bound to a Parameter; backward() adds its gradient into p.grad.
  Var parameter(Parameter& p);

  /// Result of an operator. The backward closure runs only if some input
  /// requires a gradient and the tape is enabled.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  /// Reverse sweep from a scalar (single element) root, seeded with 1.
  void backward(const Var& root);

  /// Gradient of a Var after backward(); zeros if none reached it.
  Tensor grad(const Var& v) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  bool enabled_;
  std::vector<std::shared_ptr<detail::Node>> nodes_;
  std::vector<std::shared_ptr<detail::Node>> parameter_leaves_;
};

}  // namespace tased
