#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace molmamba {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape) noexcept;
std::string shape_str(const Shape& shape);

/// Raised when operand shapes are incompatible for an op.
class ShapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// One record on the autodiff tape. Nodes are created in increasing `seq`
/// order and a node's parents always precede it, so sorting by `seq`
/// descending is a valid reverse topological order.
struct Node {
  Shape shape;
  std::shared_ptr<std::vector<double>> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
};

/// Dense row-major float64 tensor with reverse-mode gradient tracking.
/// Tensors are cheap handles; the payload is immutable once an op returns.
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor scalar(double v);
  static Tensor leaf(Shape shape, std::vector<double> values, bool requires_grad = true);
  /// Leaf that aliases externally owned storage (parameter binding).
  static Tensor shared_leaf(Shape shape, std::shared_ptr<std::vector<double>> storage);

  /// Used by op implementations.
  static Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                            std::function<void(Node&)> backward_fn);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->data->size(); }
  std::span<const double> data() const { return *node_->data; }
  double item() const;
  double operator[](std::size_t i) const { return (*node_->data)[i]; }
  double at(std::size_t r, std::size_t c) const { return (*node_->data)[r * node_->shape[1] + c]; }

  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  /// Empty until backward() has reached this tensor.
  std::span<const double> grad() const { return node_->grad; }

  /// Reverse pass from a scalar. Gradients accumulate into every reachable
  /// node that requires grad.
  void backward() const;
  /// Reverse pass seeded with an explicit upstream gradient.
  void backward(std::span<const double> seed) const;

  Tensor detach() const;

  const std::shared_ptr<Node>& node() const noexcept { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  std::shared_ptr<Node> node_;
};

}  // namespace molmamba
