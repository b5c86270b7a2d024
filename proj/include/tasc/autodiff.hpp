#pragma once

// Dense tensors with tape-free reverse-mode differentiation.
//
// Every op returns a Tensor that remembers its inputs and a closure that
// pushes the output gradient back into them. backward() walks the graph in a
// fixed topological order, so repeated runs produce bit-identical gradients.
// A graph belongs to one thread; separate graphs share nothing mutable.

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tasc::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Raised when op inputs do not conform; the message names the op and shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  /// Leaf that accumulates gradients across backward passes until zero_grad().
  static Tensor parameter(Shape shape, std::vector<double> values,
                          std::string name = {});

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> values() const;
  /// Writable view of a leaf's storage (optimizer updates, perturbations).
  std::span<double> mutable_values();
  double item() const;

  bool requires_grad() const;
  bool is_leaf() const;
  /// Keep this node's gradient after backward even though it is not a leaf.
  void retain_grad();
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Leaf sharing this tensor's storage but outside any graph.
  Tensor detach() const;
  /// Leaf sharing storage that requires grad, cutting the graph above it.
  Tensor detach_as_leaf() const;

  const std::string& name() const;
  void set_name(std::string name);
  const char* op() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

using BackwardFn = std::function<void(Node&)>;

struct Node {
  Shape shape;
  std::shared_ptr<std::vector<double>> data;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  bool retain = false;
  bool consumed = false;
  const char* op = "leaf";
  std::string name;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
};

}  // namespace detail

/// Runs reverse-mode accumulation from a one-element root.
/// Throws if the root is not scalar or has already been backpropagated.
void backward(const Tensor& root);

/// Clears every gradient reachable from root and re-arms it for backward().
void reset_graph(const Tensor& root);

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

// Elementwise ops broadcast with numpy rules.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);

/// a[..., K] x b[K, M] -> [..., M]; leading axes of a are treated as rows.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor sum_axis(const Tensor& a, std::size_t axis, bool keepdim = false);
Tensor mean_axis(const Tensor& a, std::size_t axis, bool keepdim = false);
Tensor sum_all(const Tensor& a);

/// Max-subtracted softmax. Positions where mask is 0 get probability 0; a
/// slice with no unmasked position is an error.
Tensor softmax_axis(const Tensor& a, std::size_t axis,
                    const std::optional<Tensor>& mask = std::nullopt);
Tensor log_softmax_axis(const Tensor& a, std::size_t axis);

Tensor concat_axis(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice_axis(const Tensor& a, std::size_t axis, std::size_t start,
                  std::size_t length);
Tensor reshape(const Tensor& a, Shape shape);

/// Row lookup: table[V, D] at ids -> leading ++ [D].
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids,
                   const Shape& leading);

/// Stride-1 convolution over the middle axis with zero "same" padding.
/// x[B, T, Cin], weight[K, Cin, Cout] with K odd, bias[Cout] -> [B, T, Cout].
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias);

}  // namespace tasc::ad
