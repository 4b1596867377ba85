#include "numerics/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace frn {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::contract: return "contract";
    case ErrorKind::format: return "format";
    case ErrorKind::truncated: return "truncated";
    case ErrorKind::overflow: return "overflow";
    case ErrorKind::config: return "config";
    case ErrorKind::data: return "data";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

thread_local bool g_grad_enabled = true;
bool g_anomaly = false;

std::shared_ptr<Node> make_leaf(Shape shape, Buffer data) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  return n;
}

Buffer zero_buffer(DType dtype, std::size_t n) {
  if (dtype == DType::f32) return std::vector<float>(n, 0.0f);
  return std::vector<double>(n, 0.0);
}

}  // namespace

Tensor Tensor::zeros(Shape shape, DType dtype) {
  auto n = frn::numel(shape);
  return Tensor(make_leaf(std::move(shape), zero_buffer(dtype, n)));
}

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  auto n = frn::numel(shape);
  if (dtype == DType::f32)
    return Tensor(make_leaf(std::move(shape), std::vector<float>(n, static_cast<float>(value))));
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value)));
}

Tensor Tensor::from_vector(std::vector<float> values, Shape shape) {
  require(values.size() == frn::numel(shape), ErrorKind::dimension,
          "from_vector: " + std::to_string(values.size()) + " values for shape " + to_string(shape));
  return Tensor(make_leaf(std::move(shape), std::move(values)));
}

Tensor Tensor::from_vector(std::vector<double> values, Shape shape) {
  require(values.size() == frn::numel(shape), ErrorKind::dimension,
          "from_vector: " + std::to_string(values.size()) + " values for shape " + to_string(shape));
  return Tensor(make_leaf(std::move(shape), std::move(values)));
}

Tensor Tensor::from_span(std::span<const double> values, Shape shape, DType dtype) {
  require(values.size() == frn::numel(shape), ErrorKind::dimension,
          "from_span: " + std::to_string(values.size()) + " values for shape " + to_string(shape));
  if (dtype == DType::f64)
    return Tensor(make_leaf(std::move(shape), std::vector<double>(values.begin(), values.end())));
  std::vector<float> f(values.size());
  std::transform(values.begin(), values.end(), f.begin(),
                 [](double v) { return static_cast<float>(v); });
  return Tensor(make_leaf(std::move(shape), std::move(f)));
}

Tensor Tensor::from_values(Shape shape, std::initializer_list<double> values, DType dtype) {
  return from_span(std::span<const double>(values.begin(), values.size()), std::move(shape), dtype);
}

std::vector<double> Tensor::to_vector() const {
  return std::visit([](const auto& v) { return std::vector<double>(v.begin(), v.end()); },
                    node_->data);
}

double Tensor::item() const {
  require(numel() == 1, ErrorKind::contract, "item() on tensor of shape " + to_string(shape()));
  return flat(0);
}

double Tensor::flat(std::size_t index) const {
  return std::visit([index](const auto& v) { return static_cast<double>(v.at(index)); },
                    node_->data);
}

Tensor& Tensor::requires_grad_(bool on) {
  node_->requires_grad = on;
  return *this;
}

Tensor Tensor::grad() const {
  if (!node_->grad) return Tensor::zeros(shape(), dtype());
  return Tensor(make_leaf(shape(), *node_->grad));
}

void Tensor::zero_grad() { node_->grad.reset(); }

Tensor Tensor::detach() const { return Tensor(make_leaf(shape(), node_->data)); }

Tensor Tensor::to(DType target) const {
  if (target == dtype()) return detach();
  if (target == DType::f64) {
    const auto& src = std::get<std::vector<float>>(node_->data);
    return Tensor(make_leaf(shape(), std::vector<double>(src.begin(), src.end())));
  }
  const auto& src = std::get<std::vector<double>>(node_->data);
  std::vector<float> out(src.size());
  std::transform(src.begin(), src.end(), out.begin(), [](double v) { return static_cast<float>(v); });
  return Tensor(make_leaf(shape(), std::move(out)));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

void set_anomaly_detection(bool on) { g_anomaly = on; }
bool anomaly_detection() { return g_anomaly; }

void check_finite(const Tensor& t, const std::string& where) {
  std::visit(
      [&](const auto& v) {
        for (std::size_t i = 0; i < v.size(); ++i)
          if (!std::isfinite(v[i]))
            fail(ErrorKind::numeric, where + ": non-finite value at flat index " + std::to_string(i));
      },
      t.node()->data);
}

namespace detail {

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  for (const auto* t : inputs)
    if (t && t->defined() && t->requires_grad()) return true;
  return false;
}

Tensor make_result(Shape shape, Buffer data, std::vector<Tensor> inputs, const char* op,
                   std::function<void(Node&)> backward) {
  auto node = make_leaf(std::move(shape), std::move(data));
  node->op = op;
  bool record = g_grad_enabled;
  if (record) {
    record = false;
    for (const auto& t : inputs)
      if (t.defined() && t.requires_grad()) record = true;
  }
  if (record) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.defined() ? t.node_ptr() : nullptr);
    node->backward = std::move(backward);
  }
  Tensor out(std::move(node));
  if (g_anomaly) check_finite(out, op);
  return out;
}

}  // namespace detail

Graph Graph::collect(const Tensor& root) {
  Graph g;
  g.root_ = root.node_ptr();
  std::unordered_set<Node*> seen;
  // Iterative post-order DFS so deep unrolled graphs cannot overflow the stack.
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const auto& child = node->inputs[next++];
      if (child && child->requires_grad && seen.insert(child.get()).second) {
        g.owned_.push_back(child);
        stack.emplace_back(child.get(), 0);
      }
      continue;
    }
    g.order_.push_back(node);
    stack.pop_back();
  }
  return g;
}

void backward(const Graph& graph, const Tensor& loss, bool retain_graph) {
  require(loss.numel() == 1, ErrorKind::contract,
          "backward: loss must be scalar, got shape " + to_string(loss.shape()));
  require(graph.root_.get() == loss.node(), ErrorKind::contract,
          "backward: graph was not collected from this loss");
  if (!loss.requires_grad()) return;
  dispatch(loss.dtype(), [&](auto tag) {
    using T = decltype(tag);
    detail::grad_of<T>(*loss.node())[0] += T(1);
  });
  const auto& order = graph.order_;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (!node->backward) continue;
    if (node->grad) node->backward(*node);
    if (!retain_graph) {
      node->backward = nullptr;
      node->inputs.clear();
      if (node != loss.node()) node->grad.reset();
    }
  }
}

void backward(const Tensor& loss, bool retain_graph) {
  backward(Graph::collect(loss), loss, retain_graph);
}

}  // namespace frn
