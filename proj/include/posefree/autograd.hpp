#pragma once

// Minimal reverse-mode automatic differentiation over dense double tensors.
//
// A Tensor is a shared handle to a graph Node. Operations record their inputs
// and a backward closure when gradient recording is enabled and at least one
// input requires a gradient. Calling backward() on a result walks the graph in
// reverse topological order and accumulates into every reachable leaf.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace posefree::ad {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads self.grad and accumulates into the grads of self.inputs.
  std::function<void(Node& self)> backward;
  bool requires_grad = false;

  // Returns the gradient buffer of input i (allocated on first use), or an
  // empty span when that input does not require a gradient.
  std::span<double> input_grad(std::size_t i);
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(std::vector<double> values, Shape shape, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  const std::vector<double>& vector() const { return node_->value; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad();
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }

  // Seeds d(self)/d(self) = 1; self must hold exactly one element.
  void backward() const;
  // Seeds the output gradient with an explicit vector of matching size.
  void backward(std::span<const double> seed) const;

  // Same values, no history, no gradient requirement.
  Tensor detach() const;
  Tensor reshaped(Shape shape) const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Creates an op result. The backward closure and input links are kept only
// when recording is enabled and some input requires a gradient.
Tensor make_result(std::vector<double> value, Shape shape, const std::vector<Tensor>& inputs,
                   std::function<void(Node&)> backward);

}  // namespace posefree::ad
