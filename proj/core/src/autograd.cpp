#include "tased/autograd.hpp"

#include <algorithm>
#include <stdexcept>

#include <fmt/format.h>

#include "tased/error.hpp"

namespace tased {

namespace detail {

struct Node {
  Tensor value;
  Tensor grad;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
  bool requires_grad = false;
  Parameter* sink = nullptr;

  Tensor& ensure_grad() {
    if (grad.empty()) grad = Tensor::zeros_like(value);
    return grad;
  }
};

}  // namespace detail

Parameter::Parameter(std::string n, Tensor v)
    : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros_like(value)) {}

void Parameter::zero_grad() {
  if (grad.shape() != value.shape()) {
    grad = Tensor::zeros_like(value);
  } else {
    grad.fill(0.0);
  }
}

const Tensor& Var::value() const {
  if (!node_) throw std::logic_error("Var::value on an empty Var");
  return node_->value;
}

bool Var::requires_grad() const { return node_ && node_->requires_grad; }

const Tensor& BackwardContext::output() const { return node_.value; }
const Tensor& BackwardContext::grad_output() const { return node_.grad; }
const Tensor& BackwardContext::input(std::size_t i) const { return node_.inputs.at(i)->value; }
std::size_t BackwardContext::input_count() const { return node_.inputs.size(); }
bool BackwardContext::wants(std::size_t i) const { return node_.inputs.at(i)->requires_grad; }
Tensor& BackwardContext::grad_input(std::size_t i) { return node_.inputs.at(i)->ensure_grad(); }

Var Tape::constant(Tensor value) {
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var Tape::variable(Tensor value) {
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  node->requires_grad = enabled_;
  return Var(std::move(node));
}

Var Tape::parameter(Parameter& p) {
  auto node = std::make_shared<detail::Node>();
  node->value = p.value;
  if (enabled_) {
    node->requires_grad = true;
    node->sink = &p;
    parameter_leaves_.push_back(node);
  }
  return Var(std::move(node));
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  if (enabled_) {
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Var& v) { return v.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->backward = std::move(backward);
      node->inputs.reserve(inputs.size());
      for (Var& v : inputs) node->inputs.push_back(std::move(v.node_));
      nodes_.push_back(node);
    }
  }
  return Var(std::move(node));
}

void Tape::backward(const Var& root) {
  if (!root.valid()) throw std::logic_error("Tape::backward on an empty Var");
  if (root.value().numel() != 1) {
    throw ShapeError(fmt::format("backward root must be a scalar, got shape {}",
                                 shape_str(root.shape())));
  }
  if (!root.requires_grad()) return;
  root.node_->ensure_grad().fill(1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    detail::Node& node = **it;
    if (node.grad.empty() || !node.backward) continue;
    BackwardContext ctx(node);
    node.backward(ctx);
  }
  for (const auto& leaf : parameter_leaves_) {
    if (leaf->grad.empty()) continue;
    if (leaf->sink->grad.shape() != leaf->value.shape()) leaf->sink->zero_grad();
    leaf->sink->grad.add_inplace(leaf->grad);
  }
}

Tensor Tape::grad(const Var& v) const {
  if (!v.valid()) throw std::logic_error("Tape::grad on an empty Var");
  if (v.node_->grad.empty()) return Tensor::zeros_like(v.value());
  return v.node_->grad;
}

}  // namespace tased
