#include "molmamba/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

namespace molmamba {

namespace {

std::atomic<std::uint64_t> g_seq{1};

}  // namespace

std::size_t numel(const Shape& shape) noexcept {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  return leaf(std::move(shape), std::move(values), false);
}

Tensor Tensor::zeros(Shape shape) {
  const auto n = numel(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::scalar(double v) { return constant({}, {v}); }

Tensor Tensor::leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  {
    if (numel(shape) != values.size()) {
      throw ShapeError("leaf: shape " + shape_str(shape) + " does not match " +
                       std::to_string(values.size()) + " values");
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::make_shared<std::vector<double>>(std::move(values));
    n->requires_grad = requires_grad;
    n->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
    return Tensor(std::move(n));
  }
}

Tensor Tensor::shared_leaf(Shape shape, std::shared_ptr<std::vector<double>> storage) {
  if (numel(shape) != storage->size()) {
    throw ShapeError("shared_leaf: shape " + shape_str(shape) + " does not match storage");
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(storage);
  n->requires_grad = true;
  n->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
  return Tensor(std::move(n));
}

Tensor Tensor::make_result(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                           std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::make_shared<std::vector<double>>(std::move(values));
  n->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (any) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node_);
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(n));
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return (*node_->data)[0];
}

Tensor Tensor::detach() const {
  auto n = std::make_shared<Node>();
  n->shape = node_->shape;
  n->data = node_->data;
  n->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
  return Tensor(std::move(n));
}

void Tensor::backward() const {
  if (size() != 1) throw ShapeError("backward: implicit seed needs a scalar, got " + shape_str(shape()));
  const double one = 1.0;
  backward(std::span<const double>(&one, 1));
}

void Tensor::backward(std::span<const double> seed) const {
  if (seed.size() != size()) throw ShapeError("backward: seed size mismatch");
  if (!requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{node_.get()};
  seen.insert(node_.get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->seq > b->seq; });
  // Interior gradients restart from zero; leaves accumulate across calls.
  for (Node* n : order) {
    if (n->backward_fn || n->grad.size() != n->data->size()) n->grad.assign(n->data->size(), 0.0);
  }
  for (std::size_t i = 0; i < seed.size(); ++i) node_->grad[i] += seed[i];
  for (Node* n : order) {
    if (n->backward_fn) n->backward_fn(*n);
  }
}

}  // namespace molmamba
