#include "tasc/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace tasc::ad {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

thread_local bool g_grad_enabled = true;

std::vector<double>& grad_of(Node& n) {
  if (n.grad.empty()) n.grad.assign(numel(n.shape), 0.0);
  return n.grad;
}

[[noreturn]] void shape_fail(const char* op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

NodePtr leaf_node(Shape shape, std::vector<double> values, const char* op) {
  if (numel(shape) != values.size()) {
    std::ostringstream os;
    os << "shape " << to_string(shape) << " holds " << numel(shape)
       << " values, got " << values.size();
    shape_fail(op, os.str());
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::make_shared<std::vector<double>>(std::move(values));
  n->op = op;
  return n;
}

// Builds an interior node. Inputs and the closure are only kept when some
// input needs a gradient and recording is on.
Tensor make_result(Shape shape, std::vector<double> values, const char* op,
                   std::vector<NodePtr> inputs, detail::BackwardFn fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::make_shared<std::vector<double>>(std::move(values));
  n->op = op;
  n->leaf = false;
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs = needs || in->requires_grad;
  }
  if (needs) {
    n->requires_grad = true;
    n->inputs = std::move(inputs);
    n->backward = std::move(fn);
  }
  return Tensor(std::move(n));
}

const std::vector<double>& vals(const Tensor& t) { return *t.node()->data; }

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) shape_fail(op, "undefined tensor");
}

// ---- broadcasting ---------------------------------------------------------

struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a, stride_b;  // per output axis, 0 = broadcast
};

std::vector<std::size_t> contiguous_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

Broadcast broadcast(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape pa(r - a.size(), 1), pb(r - b.size(), 1);
  pa.insert(pa.end(), a.begin(), a.end());
  pb.insert(pb.end(), b.begin(), b.end());
  Broadcast bc;
  bc.out.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (pa[i] == pb[i] || pb[i] == 1) {
      bc.out[i] = pa[i];
    } else if (pa[i] == 1) {
      bc.out[i] = pb[i];
    } else {
      shape_fail(op, "cannot broadcast " + to_string(a) + " with " + to_string(b));
    }
  }
  auto sa = contiguous_strides(pa), sb = contiguous_strides(pb);
  bc.stride_a.resize(r);
  bc.stride_b.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    bc.stride_a[i] = pa[i] == 1 ? 0 : sa[i];
    bc.stride_b[i] = pb[i] == 1 ? 0 : sb[i];
  }
  return bc;
}

// Calls f(out_index, a_index, b_index) over the broadcast output.
template <typename F>
void for_each_broadcast(const Broadcast& bc, F&& f) {
  const std::size_t total = numel(bc.out);
  if (total == 0) return;
  const std::size_t r = bc.out.size();
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  const std::size_t last = r - 1;
  const std::size_t inner = bc.out[last];
  const std::size_t sa = bc.stride_a[last], sb = bc.stride_b[last];
  std::size_t o = 0;
  while (o < total) {
    std::size_t a = ia, b = ib;
    for (std::size_t j = 0; j < inner; ++j, ++o, a += sa, b += sb) f(o, a, b);
    // advance the odometer over the outer axes
    std::size_t k = last;
    while (k-- > 0) {
      ++idx[k];
      ia += bc.stride_a[k];
      ib += bc.stride_b[k];
      if (idx[k] < bc.out[k]) break;
      ia -= bc.stride_a[k] * idx[k];
      ib -= bc.stride_b[k] * idx[k];
      idx[k] = 0;
    }
  }
}

enum class BinOp { add, sub, mul, div };

Tensor binary(const Tensor& a, const Tensor& b, BinOp kind, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  const auto& av = vals(a);
  const auto& bv = vals(b);
  std::vector<double> out;
  Shape out_shape;
  const bool same = a.shape() == b.shape();
  auto apply = [kind](double x, double y) {
    switch (kind) {
      case BinOp::add: return x + y;
      case BinOp::sub: return x - y;
      case BinOp::mul: return x * y;
      case BinOp::div: return x / y;
    }
    return 0.0;
  };
  std::optional<Broadcast> bc;
  if (same) {
    out_shape = a.shape();
    out.resize(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = apply(av[i], bv[i]);
  } else {
    bc = broadcast(a.shape(), b.shape(), op);
    out_shape = bc->out;
    out.resize(numel(out_shape));
    for_each_broadcast(*bc, [&](std::size_t o, std::size_t i, std::size_t j) {
      out[o] = apply(av[i], bv[j]);
    });
  }
  auto fn = [kind, same, bc](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    const auto& x = *na.data;
    const auto& y = *nb.data;
    const auto& g = self.grad;
    const bool ga_on = na.requires_grad, gb_on = nb.requires_grad;
    std::vector<double>* ga = ga_on ? &grad_of(na) : nullptr;
    std::vector<double>* gb = gb_on ? &grad_of(nb) : nullptr;
    auto step = [&](std::size_t o, std::size_t i, std::size_t j) {
      switch (kind) {
        case BinOp::add:
          if (ga) (*ga)[i] += g[o];
          if (gb) (*gb)[j] += g[o];
          break;
        case BinOp::sub:
          if (ga) (*ga)[i] += g[o];
          if (gb) (*gb)[j] -= g[o];
          break;
        case BinOp::mul:
          if (ga) (*ga)[i] += g[o] * y[j];
          if (gb) (*gb)[j] += g[o] * x[i];
          break;
        case BinOp::div:
          if (ga) (*ga)[i] += g[o] / y[j];
          if (gb) (*gb)[j] -= g[o] * x[i] / (y[j] * y[j]);
          break;
      }
    };
    if (same) {
      for (std::size_t o = 0; o < g.size(); ++o) step(o, o, o);
    } else {
      for_each_broadcast(*bc, step);
    }
  };
  return make_result(std::move(out_shape), std::move(out), op,
                     {a.node_ptr(), b.node_ptr()}, std::move(fn));
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, const char* op, Fwd fwd, Deriv deriv) {
  require_defined(a, op);
  const auto& av = vals(a);
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  // deriv(x, y) receives input and output values
  auto fn = [deriv](Node& self) {
    Node& na = *self.inputs[0];
    auto& ga = grad_of(na);
    const auto& x = *na.data;
    const auto& y = *self.data;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * deriv(x[i], y[i]);
  };
  return make_result(a.shape(), std::move(out), op, {a.node_ptr()}, std::move(fn));
}

struct AxisSplit {
  std::size_t outer, len, inner;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) {
    shape_fail(op, "axis " + std::to_string(axis) + " out of range for " + to_string(s));
  }
  AxisSplit sp{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) sp.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) sp.inner *= s[i];
  return sp;
}

}  // namespace

// ---- shape helpers ----------------------------------------------------------

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

// ---- Tensor -----------------------------------------------------------------

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  return Tensor(leaf_node(std::move(shape), std::move(values), "constant"));
}

Tensor Tensor::zeros(Shape shape) {
  const auto n = numel(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(Shape shape, double value) {
  const auto n = numel(shape);
  return constant(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return constant({1}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values, std::string name) {
  auto n = leaf_node(std::move(shape), std::move(values), "parameter");
  n->requires_grad = true;
  n->name = std::move(name);
  return Tensor(std::move(n));
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= node_->shape.size()) {
    throw ShapeError("dim: axis " + std::to_string(axis) + " out of range for " +
                     to_string(node_->shape));
  }
  return node_->shape[axis];
}

std::size_t Tensor::size() const { return node_->data->size(); }

std::span<const double> Tensor::values() const { return *node_->data; }

std::span<double> Tensor::mutable_values() {
  if (!node_->leaf) throw std::logic_error("mutable_values: tensor is not a leaf");
  return *node_->data;
}

double Tensor::item() const {
  if (size() != 1) {
    throw ShapeError("item: tensor of shape " + to_string(shape()) + " is not scalar");
  }
  return (*node_->data)[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::is_leaf() const { return node_->leaf; }
void Tensor::retain_grad() { node_->retain = true; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (node_->grad.empty()) {
    throw std::logic_error("grad: no gradient on '" + node_->name + "' (" + node_->op + ")");
  }
  return node_->grad;
}

void Tensor::zero_grad() {
  node_->grad.clear();
  node_->grad.shrink_to_fit();
}

Tensor Tensor::detach() const {
  auto n = std::make_shared<Node>();
  n->shape = node_->shape;
  n->data = node_->data;
  n->op = "detach";
  n->name = node_->name;
  return Tensor(std::move(n));
}

Tensor Tensor::detach_as_leaf() const {
  Tensor t = detach();
  t.node_->requires_grad = true;
  return t;
}

const std::string& Tensor::name() const { return node_->name; }
void Tensor::set_name(std::string name) { node_->name = std::move(name); }
const char* Tensor::op() const { return node_->op; }

// ---- graph traversal ------------------------------------------------------

namespace {

// Post-order over nodes that require grad; inputs are visited in declaration
// order so the resulting order is a pure function of the graph.
std::vector<Node*> topo_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node* child = n->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

void backward(const Tensor& root) {
  if (!root.defined()) throw std::invalid_argument("backward: undefined root");
  Node* r = root.node();
  if (numel(r->shape) != 1) {
    throw ShapeError("backward: root must have exactly one element, got shape " +
                     to_string(r->shape));
  }
  if (r->consumed) {
    throw std::logic_error("backward: graph already backpropagated; call reset_graph first");
  }
  if (!r->requires_grad) {
    throw std::logic_error("backward: root does not depend on any gradient-tracked tensor");
  }
  auto order = topo_order(r);
  grad_of(*r)[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  for (Node* n : order) {
    if (!n->leaf && !n->retain && n != r) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
  r->consumed = true;
}

void reset_graph(const Tensor& root) {
  if (!root.defined()) return;
  Node* r = root.node();
  for (Node* n : topo_order(r)) n->grad.clear();
  r->grad.clear();
  r->consumed = false;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// ---- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::mul, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::div, "div"); }

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, "scale", [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Tensor tanh(const Tensor& a) {
  return unary(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a, "sigmoid",
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, "relu", [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      a, "log", [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

// ---- matmul -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.rank() < 1 || b.rank() != 2 || a.shape().back() != b.dim(0)) {
    shape_fail("matmul", "cannot multiply " + to_string(a.shape()) + " by " +
                             to_string(b.shape()));
  }
  const std::size_t k_dim = b.dim(0), m_dim = b.dim(1);
  const std::size_t rows = a.size() / k_dim;
  const auto& av = vals(a);
  const auto& bv = vals(b);
  std::vector<double> out(rows * m_dim, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double* o = out.data() + r * m_dim;
    const double* ar = av.data() + r * k_dim;
    for (std::size_t k = 0; k < k_dim; ++k) {
      const double x = ar[k];
      if (x == 0.0) continue;
      const double* br = bv.data() + k * m_dim;
      for (std::size_t m = 0; m < m_dim; ++m) o[m] += x * br[m];
    }
  }
  Shape shape = a.shape();
  shape.back() = m_dim;
  auto fn = [rows, k_dim, m_dim](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    const auto& g = self.grad;
    if (na.requires_grad) {
      auto& ga = grad_of(na);
      const auto& bv = *nb.data;
      for (std::size_t r = 0; r < rows; ++r) {
        const double* gr = g.data() + r * m_dim;
        double* gar = ga.data() + r * k_dim;
        for (std::size_t k = 0; k < k_dim; ++k) {
          const double* br = bv.data() + k * m_dim;
          double acc = 0.0;
          for (std::size_t m = 0; m < m_dim; ++m) acc += gr[m] * br[m];
          gar[k] += acc;
        }
      }
    }
    if (nb.requires_grad) {
      auto& gb = grad_of(nb);
      const auto& av = *na.data;
      for (std::size_t r = 0; r < rows; ++r) {
        const double* gr = g.data() + r * m_dim;
        const double* ar = av.data() + r * k_dim;
        for (std::size_t k = 0; k < k_dim; ++k) {
          const double x = ar[k];
          if (x == 0.0) continue;
          double* gbr = gb.data() + k * m_dim;
          for (std::size_t m = 0; m < m_dim; ++m) gbr[m] += x * gr[m];
        }
      }
    }
  };
  return make_result(std::move(shape), std::move(out), "matmul",
                     {a.node_ptr(), b.node_ptr()}, std::move(fn));
}

// ---- reductions -------------------------------------------------------------

namespace {

Tensor reduce_axis(const Tensor& a, std::size_t axis, bool keepdim, bool mean,
                   const char* op) {
  require_defined(a, op);
  const auto sp = split_axis(a.shape(), axis, op);
  const auto& av = vals(a);
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  const double factor = mean ? 1.0 / static_cast<double>(sp.len) : 1.0;
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t l = 0; l < sp.len; ++l) {
      const double* src = av.data() + (o * sp.len + l) * sp.inner;
      double* dst = out.data() + o * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
  }
  if (mean) {
    for (auto& v : out) v *= factor;
  }
  Shape shape = a.shape();
  if (keepdim) {
    shape[axis] = 1;
  } else {
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
    if (shape.empty()) shape = {1};
  }
  auto fn = [sp, factor](Node& self) {
    auto& ga = grad_of(*self.inputs[0]);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      const double* g = self.grad.data() + o * sp.inner;
      for (std::size_t l = 0; l < sp.len; ++l) {
        double* dst = ga.data() + (o * sp.len + l) * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += g[i] * factor;
      }
    }
  };
  return make_result(std::move(shape), std::move(out), op, {a.node_ptr()}, std::move(fn));
}

}  // namespace

Tensor sum_axis(const Tensor& a, std::size_t axis, bool keepdim) {
  return reduce_axis(a, axis, keepdim, false, "sum_axis");
}

Tensor mean_axis(const Tensor& a, std::size_t axis, bool keepdim) {
  return reduce_axis(a, axis, keepdim, true, "mean_axis");
}

Tensor sum_all(const Tensor& a) {
  require_defined(a, "sum_all");
  return sum_axis(reshape(a, {a.size()}), 0);
}

// ---- softmax ------------------------------------------------------------------

Tensor softmax_axis(const Tensor& a, std::size_t axis, const std::optional<Tensor>& mask) {
  require_defined(a, "softmax_axis");
  const auto sp = split_axis(a.shape(), axis, "softmax_axis");
  if (mask && mask->shape() != a.shape()) {
    shape_fail("softmax_axis", "mask shape " + to_string(mask->shape()) +
                                   " differs from input " + to_string(a.shape()));
  }
  const auto& av = vals(a);
  const double* mv = mask ? vals(*mask).data() : nullptr;
  std::vector<double> out(av.size(), 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      auto at = [&](std::size_t l) { return (o * sp.len + l) * sp.inner + i; };
      double mx = -std::numeric_limits<double>::infinity();
      bool any = false;
      for (std::size_t l = 0; l < sp.len; ++l) {
        if (mv && mv[at(l)] == 0.0) continue;
        mx = std::max(mx, av[at(l)]);
        any = true;
      }
      if (!any) shape_fail("softmax_axis", "every position of a slice is masked");
      double total = 0.0;
      for (std::size_t l = 0; l < sp.len; ++l) {
        if (mv && mv[at(l)] == 0.0) continue;
        out[at(l)] = std::exp(av[at(l)] - mx);
        total += out[at(l)];
      }
      for (std::size_t l = 0; l < sp.len; ++l) out[at(l)] /= total;
    }
  }
  auto fn = [sp](Node& self) {
    auto& ga = grad_of(*self.inputs[0]);
    const auto& y = *self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        auto at = [&](std::size_t l) { return (o * sp.len + l) * sp.inner + i; };
        double dot = 0.0;
        for (std::size_t l = 0; l < sp.len; ++l) dot += y[at(l)] * g[at(l)];
        for (std::size_t l = 0; l < sp.len; ++l) ga[at(l)] += y[at(l)] * (g[at(l)] - dot);
      }
    }
  };
  return make_result(a.shape(), std::move(out), "softmax_axis", {a.node_ptr()}, std::move(fn));
}

Tensor log_softmax_axis(const Tensor& a, std::size_t axis) {
  require_defined(a, "log_softmax_axis");
  const auto sp = split_axis(a.shape(), axis, "log_softmax_axis");
  const auto& av = vals(a);
  std::vector<double> out(av.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      auto at = [&](std::size_t l) { return (o * sp.len + l) * sp.inner + i; };
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < sp.len; ++l) mx = std::max(mx, av[at(l)]);
      double total = 0.0;
      for (std::size_t l = 0; l < sp.len; ++l) total += std::exp(av[at(l)] - mx);
      const double lse = mx + std::log(total);
      for (std::size_t l = 0; l < sp.len; ++l) out[at(l)] = av[at(l)] - lse;
    }
  }
  auto fn = [sp](Node& self) {
    auto& ga = grad_of(*self.inputs[0]);
    const auto& y = *self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        auto at = [&](std::size_t l) { return (o * sp.len + l) * sp.inner + i; };
        double gsum = 0.0;
        for (std::size_t l = 0; l < sp.len; ++l) gsum += g[at(l)];
        for (std::size_t l = 0; l < sp.len; ++l) {
          ga[at(l)] += g[at(l)] - std::exp(y[at(l)]) * gsum;
        }
      }
    }
  };
  return make_result(a.shape(), std::move(out), "log_softmax_axis", {a.node_ptr()},
                     std::move(fn));
}

// ---- structural ---------------------------------------------------------------

Tensor concat_axis(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) shape_fail("concat_axis", "no inputs");
  for (const auto& p : parts) require_defined(p, "concat_axis");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) {
    shape_fail("concat_axis", "axis " + std::to_string(axis) + " out of range for " +
                                  to_string(first));
  }
  Shape shape = first;
  shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) {
      shape_fail("concat_axis", "incompatible parts " + to_string(first) + " and " +
                                    to_string(s) + " on axis " + std::to_string(axis));
    }
    shape[axis] += s[axis];
  }
  const auto sp = split_axis(shape, axis, "concat_axis");
  std::vector<double> out(numel(shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t len = p.shape()[axis];
    const auto& pv = vals(p);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(pv.data() + o * len * sp.inner, len * sp.inner,
                  out.data() + (o * sp.len + offset) * sp.inner);
    }
    offset += len;
  }
  std::vector<NodePtr> inputs;
  for (const auto& p : parts) inputs.push_back(p.node_ptr());
  auto fn = [sp, offsets, axis](Node& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      Node& in = *self.inputs[k];
      if (!in.requires_grad) continue;
      auto& gi = grad_of(in);
      const std::size_t len = in.shape[axis];
      for (std::size_t o = 0; o < sp.outer; ++o) {
        const double* src = self.grad.data() + (o * sp.len + offsets[k]) * sp.inner;
        double* dst = gi.data() + o * len * sp.inner;
        for (std::size_t i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
      }
    }
  };
  return make_result(std::move(shape), std::move(out), "concat_axis", std::move(inputs),
                     std::move(fn));
}

Tensor slice_axis(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  require_defined(a, "slice_axis");
  const auto sp = split_axis(a.shape(), axis, "slice_axis");
  if (start + length > sp.len || length == 0) {
    shape_fail("slice_axis", "range [" + std::to_string(start) + ", " +
                                 std::to_string(start + length) + ") invalid for axis " +
                                 std::to_string(axis) + " of " + to_string(a.shape()));
  }
  const auto& av = vals(a);
  std::vector<double> out(sp.outer * length * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(av.data() + (o * sp.len + start) * sp.inner, length * sp.inner,
                out.data() + o * length * sp.inner);
  }
  Shape shape = a.shape();
  shape[axis] = length;
  auto fn = [sp, start, length](Node& self) {
    auto& ga = grad_of(*self.inputs[0]);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      const double* src = self.grad.data() + o * length * sp.inner;
      double* dst = ga.data() + (o * sp.len + start) * sp.inner;
      for (std::size_t i = 0; i < length * sp.inner; ++i) dst[i] += src[i];
    }
  };
  return make_result(std::move(shape), std::move(out), "slice_axis", {a.node_ptr()},
                     std::move(fn));
}

Tensor reshape(const Tensor& a, Shape shape) {
  require_defined(a, "reshape");
  if (numel(shape) != a.size()) {
    shape_fail("reshape", "cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  auto fn = [](Node& self) {
    auto& ga = grad_of(*self.inputs[0]);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
  };
  return make_result(std::move(shape), vals(a), "reshape", {a.node_ptr()}, std::move(fn));
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids, const Shape& leading) {
  require_defined(table, "gather_rows");
  if (table.rank() != 2) {
    shape_fail("gather_rows", "table must be rank 2, got " + to_string(table.shape()));
  }
  if (numel(leading) != ids.size()) {
    shape_fail("gather_rows", "leading shape " + to_string(leading) + " does not hold " +
                                  std::to_string(ids.size()) + " ids");
  }
  const std::size_t rows = table.dim(0), width = table.dim(1);
  const auto& tv = vals(table);
  std::vector<double> out(ids.size() * width);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= rows) {
      shape_fail("gather_rows", "id " + std::to_string(ids[i]) + " outside table " +
                                    to_string(table.shape()));
    }
    std::copy_n(tv.data() + ids[i] * width, width, out.data() + i * width);
  }
  Shape shape = leading;
  shape.push_back(width);
  std::vector<std::size_t> id_copy(ids.begin(), ids.end());
  auto fn = [id_copy = std::move(id_copy), width](Node& self) {
    auto& gt = grad_of(*self.inputs[0]);
    for (std::size_t i = 0; i < id_copy.size(); ++i) {
      const double* src = self.grad.data() + i * width;
      double* dst = gt.data() + id_copy[i] * width;
      for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
    }
  };
  return make_result(std::move(shape), std::move(out), "gather_rows", {table.node_ptr()},
                     std::move(fn));
}

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_defined(x, "conv1d");
  require_defined(weight, "conv1d");
  require_defined(bias, "conv1d");
  if (x.rank() != 3 || weight.rank() != 3 || bias.rank() != 1 ||
      weight.dim(1) != x.dim(2) || bias.dim(0) != weight.dim(2) || weight.dim(0) % 2 == 0) {
    shape_fail("conv1d", "input " + to_string(x.shape()) + ", weight " +
                             to_string(weight.shape()) + ", bias " + to_string(bias.shape()) +
                             " (expected [B,T,Cin], [K odd,Cin,Cout], [Cout])");
  }
  const std::size_t batch = x.dim(0), steps = x.dim(1), cin = x.dim(2);
  const std::size_t width = weight.dim(0), cout = weight.dim(2);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(width / 2);
  const auto& xv = vals(x);
  const auto& wv = vals(weight);
  const auto& bv = vals(bias);
  std::vector<double> out(batch * steps * cout);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < steps; ++t) {
      double* o = out.data() + (b * steps + t) * cout;
      std::copy_n(bv.data(), cout, o);
      for (std::size_t j = 0; j < width; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - pad;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(steps)) continue;
        const double* xr = xv.data() + (b * steps + static_cast<std::size_t>(src)) * cin;
        for (std::size_t c = 0; c < cin; ++c) {
          const double xval = xr[c];
          if (xval == 0.0) continue;
          const double* wr = wv.data() + (j * cin + c) * cout;
          for (std::size_t m = 0; m < cout; ++m) o[m] += xval * wr[m];
        }
      }
    }
  }
  auto fn = [batch, steps, cin, width, cout, pad](Node& self) {
    Node& nx = *self.inputs[0];
    Node& nw = *self.inputs[1];
    Node& nb = *self.inputs[2];
    const auto& g = self.grad;
    const auto& xv = *nx.data;
    const auto& wv = *nw.data;
    std::vector<double>* gx = nx.requires_grad ? &grad_of(nx) : nullptr;
    std::vector<double>* gw = nw.requires_grad ? &grad_of(nw) : nullptr;
    std::vector<double>* gb = nb.requires_grad ? &grad_of(nb) : nullptr;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t t = 0; t < steps; ++t) {
        const double* gr = g.data() + (b * steps + t) * cout;
        if (gb) {
          for (std::size_t m = 0; m < cout; ++m) (*gb)[m] += gr[m];
        }
        for (std::size_t j = 0; j < width; ++j) {
          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - pad;
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(steps)) continue;
          const std::size_t row = (b * steps + static_cast<std::size_t>(src)) * cin;
          for (std::size_t c = 0; c < cin; ++c) {
            const double* wr = wv.data() + (j * cin + c) * cout;
            if (gx) {
              double acc = 0.0;
              for (std::size_t m = 0; m < cout; ++m) acc += gr[m] * wr[m];
              (*gx)[row + c] += acc;
            }
            if (gw) {
              const double xval = xv[row + c];
              double* gwr = gw->data() + (j * cin + c) * cout;
              for (std::size_t m = 0; m < cout; ++m) gwr[m] += xval * gr[m];
            }
          }
        }
      }
    }
  };
  return make_result({batch, steps, cout}, std::move(out), "conv1d",
                     {x.node_ptr(), weight.node_ptr(), bias.node_ptr()}, std::move(fn));
}

}  // namespace tasc::ad
