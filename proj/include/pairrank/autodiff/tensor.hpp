#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pairrank::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Raised for dimension/shape violations in tensor operations.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a forward or backward buffer contains NaN or Inf.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads self.grad and accumulates into the inputs' grad buffers.
  std::function<void(Node& self)> backward;

  bool is_leaf() const { return inputs.empty(); }
  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Reference-counted handle to a dense row-major array of doubles.
///
/// Operations on tensors record a define-by-run graph whenever at least one
/// input requires a gradient (and no NoGradGuard is active). Copies of a
/// Tensor alias the same storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  /// Mutable access is meant for leaves (parameters, inputs); mutating an
  /// interior node after a forward pass invalidates its graph.
  std::span<double> mutable_data() { return node_->data; }
  double item() const;
  double operator[](std::size_t i) const { return node_->data[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; empty span when no gradient has been accumulated.
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad();

  /// Deep copy of data (and requires_grad flag); the copy is a fresh leaf.
  Tensor clone() const;
  /// Same data, detached from the graph.
  Tensor detach() const;
  /// Copy of this tensor viewed with a new shape of equal element count.
  Tensor reshape(Shape shape) const;

  /// Throws NonFiniteError naming `what` if any value is NaN/Inf.
  void check_finite(const char* what) const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Creates an op output. Records `inputs` and `backward` only when graph
/// recording is enabled and some input requires a gradient.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs, std::function<void(detail::Node&)> backward);

/// Runs reverse-mode differentiation from a scalar loss.
///
/// Every requires-grad leaf reachable from `loss` receives d(loss)/d(leaf),
/// added to whatever its grad buffer already held. Interior nodes are visited
/// once each, in reverse topological order. Throws ShapeError for a
/// non-scalar loss and NonFiniteError if a gradient becomes non-finite.
void backward(const Tensor& loss);

}  // namespace pairrank::ad
