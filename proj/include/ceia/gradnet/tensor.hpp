#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ceia::gradnet {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One vertex of the computation graph. Leaves (parameters, inputs) have no
// parents; interior nodes carry a closure that pushes `grad` into parents.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad();
};

// Value-semantic handle onto a graph node. Copies alias the same node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  double item() const;
  double at(std::size_t flat) const { return node_->value.at(flat); }

  // Gradient buffer; empty span if backward never reached this node.
  std::span<const double> grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad();

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  const std::string& op() const { return node_->op; }

  // Fresh leaf with a copy of the values; no graph history.
  Tensor detach() const;

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

// Disables graph recording on this thread while alive.
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

// Keeps large freed blocks in the heap so per-step activations are reused
// instead of being unmapped and faulted in again. No-op outside glibc.
void tune_allocator();

// Reverse pass from a scalar root. Nodes are visited in reverse topological
// order; parents are expanded in their stored order so accumulation is
// deterministic.
void backward(const Tensor& root);

// Builds an interior node. `backward_fn` is attached only if some parent
// requires a gradient and recording is enabled.
Tensor make_result(Shape shape, std::vector<double> value, std::string op,
                   std::vector<Tensor> parents,
                   std::function<void(Node&)> backward_fn);

}  // namespace ceia::gradnet
