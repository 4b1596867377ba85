#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "numerics/error.hpp"

namespace frn {

enum class DType : std::uint8_t { f32, f64 };

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

using Buffer = std::variant<std::vector<float>, std::vector<double>>;

/// One vertex of the autodiff graph. Owns the value, the (lazily allocated)
/// gradient, and the closure that pushes its gradient into its inputs.
struct Node {
  Shape shape;
  Buffer data;
  std::optional<Buffer> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  DType dtype() const { return data.index() == 0 ? DType::f32 : DType::f64; }
  bool is_leaf() const { return inputs.empty() && !backward; }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, DType dtype = DType::f32);
  static Tensor full(Shape shape, double value, DType dtype = DType::f32);
  static Tensor from_vector(std::vector<float> values, Shape shape);
  static Tensor from_vector(std::vector<double> values, Shape shape);
  static Tensor from_values(Shape shape, std::initializer_list<double> values,
                            DType dtype = DType::f32);
  static Tensor from_span(std::span<const double> values, Shape shape, DType dtype = DType::f32);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return frn::numel(node_->shape); }
  DType dtype() const { return node_->dtype(); }

  template <class T>
  std::span<const T> data() const {
    return std::get<std::vector<T>>(node_->data);
  }
  template <class T>
  std::span<T> data_mut() {
    return std::get<std::vector<T>>(node_->data);
  }

  std::vector<double> to_vector() const;
  double item() const;
  double flat(std::size_t index) const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& requires_grad_(bool on = true);

  bool has_grad() const { return node_->grad.has_value(); }
  /// Gradient as a detached tensor; zeros when none has been accumulated.
  Tensor grad() const;
  template <class T>
  std::span<const T> grad_data() const {
    return std::get<std::vector<T>>(*node_->grad);
  }
  void zero_grad();

  /// Fresh leaf holding a copy of the value.
  Tensor detach() const;
  Tensor to(DType dtype) const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
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

/// When on, every op result is scanned for NaN/Inf and a numeric error names
/// the offending op.
void set_anomaly_detection(bool on);
bool anomaly_detection();
void check_finite(const Tensor& t, const std::string& where);

/// Reverse topological traversal record of everything reachable from a root.
class Graph {
 public:
  static Graph collect(const Tensor& root);
  /// Nodes in execution (topological) order; inputs precede consumers.
  const std::vector<Node*>& nodes() const { return order_; }

 private:
  std::vector<Node*> order_;
  // Keeps every node alive while backward releases edges.
  std::vector<std::shared_ptr<Node>> owned_;
  std::shared_ptr<Node> root_;
  friend void backward(const Graph& graph, const Tensor& loss, bool retain_graph);
};

/// Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from
/// loss. Interior closures are released unless retain_graph is set.
void backward(const Graph& graph, const Tensor& loss, bool retain_graph = false);
void backward(const Tensor& loss, bool retain_graph = false);

template <class F>
decltype(auto) dispatch(DType dtype, F&& f) {
  if (dtype == DType::f32) return f(float{});
  return f(double{});
}

namespace detail {

/// Creates a graph node for an op result. Recording happens only when grad
/// mode is on and at least one input requires grad.
Tensor make_result(Shape shape, Buffer data, std::vector<Tensor> inputs, const char* op,
                   std::function<void(Node&)> backward);

bool any_requires_grad(std::initializer_list<const Tensor*> inputs);

template <class T>
std::span<T> grad_of(Node& node) {
  if (!node.grad) node.grad = Buffer{std::vector<T>(numel(node.shape), T(0))};
  return std::get<std::vector<T>>(*node.grad);
}

template <class T>
std::span<const T> values_of(const Node& node) {
  return std::get<std::vector<T>>(node.data);
}

template <class T>
std::span<T> mutable_values_of(Node& node) {
  return std::get<std::vector<T>>(node.data);
}

}  // namespace detail

}  // namespace frn
