#include "pairrank/autodiff/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace pairrank::ad {

namespace {

/// Branch-free scan: x * 0 is NaN exactly when x is NaN or infinite.
bool all_finite(const std::vector<double>& values) {
  double acc = 0.0;
  for (const double v : values) acc += v * 0.0;
  return acc == 0.0;
}

thread_local bool g_grad_enabled = true;

std::shared_ptr<detail::Node> make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  if (values.size() != shape_numel(shape)) {
    throw ShapeError("tensor data length " + std::to_string(values.size()) +
                     " does not match shape " + shape_string(shape));
  }
  for (const auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (const auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
  out << ']';
  return out.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape()));
  }
  return node_->shape[axis];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() requires a single-element tensor, got " + shape_string(shape()));
  return node_->data[0];
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  auto node = make_leaf(node_->shape, node_->data, node_->requires_grad);
  return Tensor(std::move(node));
}

Tensor Tensor::detach() const {
  return Tensor(make_leaf(node_->shape, node_->data, false));
}

Tensor Tensor::reshape(Shape new_shape) const {
  if (shape_numel(new_shape) != numel()) {
    throw ShapeError("cannot reshape " + shape_string(shape()) + " to " + shape_string(new_shape));
  }
  return make_result("reshape", std::move(new_shape), node_->data, {*this}, [](detail::Node& self) {
    auto& in = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < in.size(); ++i) in[i] += self.grad[i];
  });
}

void Tensor::check_finite(const char* what) const {
  if (!all_finite(node_->data)) throw NonFiniteError(std::string("non-finite value in ") + what);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Tensor make_result(const char* op, Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   std::function<void(detail::Node&)> backward) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  if (!all_finite(node->data)) throw NonFiniteError(std::string("non-finite output from ") + op);
  bool needs_grad = false;
  if (g_grad_enabled) {
    for (const auto& t : inputs) needs_grad = needs_grad || t.requires_grad();
  }
  if (needs_grad) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& t : inputs) node->inputs.push_back(t.node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward requires a scalar loss");
  }
  detail::Node* root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order (inputs before outputs).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* node : order) {
    if (!node->is_leaf()) node->grad.assign(node->data.size(), 0.0);
  }
  root->ensure_grad()[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->is_leaf()) continue;
    node->backward(*node);
    // Interior gradients are consumed exactly once.
    std::vector<double>().swap(node->grad);
  }

  for (auto* node : order) {
    if (!node->is_leaf()) continue;
    if (!all_finite(node->grad)) throw NonFiniteError("non-finite gradient reached a leaf tensor");
  }
}

}  // namespace pairrank::ad
