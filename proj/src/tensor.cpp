#include "vcediff/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace vcediff {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
  out << ']';
  return out.str();
}

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one extent");
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
}

thread_local Graph* g_active_graph = nullptr;

}  // namespace

// Grants op implementations access to tensor internals.
struct OpAccess {
  static std::shared_ptr<detail::Node> node(const Tensor& t) { return t.node_; }
  static Tensor wrap(std::shared_ptr<detail::Node> n) { return Tensor(std::move(n)); }
};

namespace {

using NodePtr = std::shared_ptr<detail::Node>;

std::vector<double>& grad_of(detail::Node& n) {
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

Graph* recording_graph(std::initializer_list<const Tensor*> inputs) {
  Graph* g = Graph::active();
  if (g == nullptr) return nullptr;
  for (const Tensor* t : inputs) {
    if (t != nullptr && t->requires_grad()) return g;
  }
  return nullptr;
}

Tensor make_output(Shape shape, std::vector<double> values, const char* op) {
  Tensor out(std::move(shape), std::move(values));
  out.check_finite(op);
  return out;
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() : Tensor(Shape{1}, 0.0) {}

Tensor::Tensor(Shape shape, double fill) : node_(std::make_shared<detail::Node>()) {
  validate_shape(shape);
  node_->value.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
  check_finite("Tensor");
}

Tensor::Tensor(Shape shape, std::vector<double> values) : node_(std::make_shared<detail::Node>()) {
  validate_shape(shape);
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("shape " + shape_str(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  check_finite("Tensor");
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t(std::move(shape), std::move(values));
  t.set_requires_grad(true);
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("axis out of range for " + shape_str(shape()));
  return node_->shape[axis];
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw ShapeError("rows() needs a rank-2 tensor, got " + shape_str(shape()));
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw ShapeError("cols() needs a rank-2 tensor, got " + shape_str(shape()));
  return node_->shape[1];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() needs a one-element tensor, got " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t i, std::size_t j) const { return node_->value[i * cols() + j]; }
double& Tensor::at(std::size_t i, std::size_t j) { return node_->value[i * cols() + j]; }

std::span<double> Tensor::grad() { return grad_of(*node_); }

std::span<const double> Tensor::grad() const { return grad_of(*node_); }

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

std::optional<std::size_t> Tensor::node_id() const {
  if (node_->graph == nullptr) return std::nullopt;
  return node_->id;
}

Tensor Tensor::clone() const {
  Tensor t(node_->shape, node_->value);
  t.node_->requires_grad = node_->requires_grad;
  t.node_->grad = node_->grad;
  return t;
}

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->value); }

void Tensor::assign(std::span<const double> values) {
  if (values.size() != numel()) {
    throw ShapeError("assign: expected " + std::to_string(numel()) + " values, got " +
                     std::to_string(values.size()));
  }
  std::copy(values.begin(), values.end(), node_->value.begin());
  check_finite("assign");
}

void Tensor::check_finite(const char* what) const {
  // x * 0 is NaN exactly for non-finite x; Eigen vectorizes the sum.
  const auto& v = node_->value;
  using Arr = Eigen::Array<double, Eigen::Dynamic, 1>;
  if (!std::isnan((Eigen::Map<const Arr>(v.data(), static_cast<Eigen::Index>(v.size())) * 0.0).sum())) return;
  for (std::size_t i = 0; i < node_->value.size(); ++i) {
    if (!std::isfinite(node_->value[i])) {
      throw NumericError(std::string(what) + ": non-finite value at flat index " +
                         std::to_string(i));
    }
  }
}

// ---------------------------------------------------------------------------
// Graph

Graph::~Graph() {
  for (auto& n : nodes_) {
    if (n->graph == this) n->graph = nullptr;
  }
}

Graph::Recording::Recording(Graph& graph) : previous_(g_active_graph) { g_active_graph = &graph; }

Graph::Recording::~Recording() { g_active_graph = previous_; }

Graph* Graph::active() { return g_active_graph; }

std::size_t Graph::track(const std::shared_ptr<detail::Node>& node) {
  if (node->graph == this) return node->id;
  if (node->graph != nullptr) {
    throw UsageError("tensor is already recorded by another live graph");
  }
  node->graph = this;
  node->id = nodes_.size();
  nodes_.push_back(node);
  is_leaf_.push_back(true);
  return node->id;
}

void Graph::record(std::vector<Tensor> inputs, Tensor& output, std::function<void()> backward_rule) {
  Op op;
  for (const Tensor& in : inputs) {
    if (in.requires_grad()) op.inputs.push_back(track(in.node_));
  }
  output.node_->requires_grad = true;
  op.output = track(output.node_);
  is_leaf_[op.output] = false;
  op.backward_rule = std::move(backward_rule);
  ops_.push_back(std::move(op));
}

void Graph::backward(const Tensor& root) {
  if (root.numel() != 1) {
    throw UsageError("backward root must be a scalar, got " + shape_str(root.shape()));
  }
  if (root.node_->graph != this) throw UsageError("backward root was not recorded by this graph");
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    auto& g = nodes_[i]->grad;
    if (is_leaf_[i]) {
      grad_of(*nodes_[i]);
    } else {
      g.assign(nodes_[i]->value.size(), 0.0);
    }
  }
  grad_of(*root.node_)[0] += 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->backward_rule();
}

void backward(Graph& graph, const Tensor& root) { graph.backward(root); }

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  MatMap(out.data(), m, n).noalias() =
      ConstMatMap(a.data().data(), m, k) * ConstMatMap(b.data().data(), k, n);
  Tensor y = make_output({m, n}, std::move(out), "matmul");
  if (Graph* g = recording_graph({&a, &b})) {
    NodePtr na = OpAccess::node(a), nb = OpAccess::node(b), ny = OpAccess::node(y);
    g->record({a, b}, y, [na, nb, ny, m, k, n] {
      ConstMatMap gy(ny->grad.data(), m, n);
      if (na->requires_grad) {
        MatMap(grad_of(*na).data(), m, k).noalias() += gy * ConstMatMap(nb->value.data(), k, n).transpose();
      }
      if (nb->requires_grad) {
        MatMap(grad_of(*nb).data(), k, n).noalias() += ConstMatMap(na->value.data(), m, k).transpose() * gy;
      }
    });
  }
  return y;
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  MatMap(out.data(), n, m) = ConstMatMap(a.data().data(), m, n).transpose();
  Tensor y = make_output({n, m}, std::move(out), "transpose");
  if (Graph* g = recording_graph({&a})) {
    NodePtr na = OpAccess::node(a), ny = OpAccess::node(y);
    g->record({a}, y, [na, ny, m, n] {
      auto& ga = grad_of(*na);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += ny->grad[j * m + i];
    });
  }
  return y;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor* b) {
  require_rank2(x, "linear");
  require_rank2(w, "linear");
  const std::size_t n = x.rows(), in = x.cols(), out_dim = w.rows();
  if (w.cols() != in) {
    throw ShapeError("linear: input width " + std::to_string(in) + " vs weight " +
                     shape_str(w.shape()));
  }
  if (b != nullptr && b->numel() != out_dim) {
    throw ShapeError("linear: bias has " + std::to_string(b->numel()) + " entries, expected " +
                     std::to_string(out_dim));
  }
  std::vector<double> out(n * out_dim);
  MatMap ym(out.data(), n, out_dim);
  ym.noalias() = ConstMatMap(x.data().data(), n, in) * ConstMatMap(w.data().data(), out_dim, in).transpose();
  if (b != nullptr) {
    ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b->data().data(), static_cast<Eigen::Index>(out_dim));
  }
  Tensor y = make_output({n, out_dim}, std::move(out), "linear");
  if (Graph* g = recording_graph({&x, &w, b})) {
    NodePtr nx = OpAccess::node(x), nw = OpAccess::node(w), ny = OpAccess::node(y);
    NodePtr nb = b != nullptr ? OpAccess::node(*b) : nullptr;
    std::vector<Tensor> inputs{x, w};
    if (b != nullptr) inputs.push_back(*b);
    g->record(std::move(inputs), y, [nx, nw, nb, ny, n, in, out_dim] {
      ConstMatMap gy(ny->grad.data(), n, out_dim);
      if (nx->requires_grad) {
        MatMap(grad_of(*nx).data(), n, in).noalias() += gy * ConstMatMap(nw->value.data(), out_dim, in);
      }
      if (nw->requires_grad) {
        MatMap(grad_of(*nw).data(), out_dim, in).noalias() += gy.transpose() * ConstMatMap(nx->value.data(), n, in);
      }
      if (nb && nb->requires_grad) {
        auto& gb = grad_of(*nb);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t o = 0; o < out_dim; ++o) gb[o] += ny->grad[i * out_dim + o];
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Elementwise binary with scalar broadcast

namespace {

enum class BinaryKind { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* name) {
  const bool a_scalar = a.numel() == 1 && b.numel() != 1;
  const bool b_scalar = b.numel() == 1 && !a_scalar && a.shape() != b.shape();
  if (!a_scalar && !b_scalar && a.shape() != b.shape()) {
    throw ShapeError(std::string(name) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const Shape& shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = shape_numel(shape);
  using Arr = Eigen::Array<double, Eigen::Dynamic, 1>;
  const auto len = static_cast<Eigen::Index>(n);
  std::vector<double> out(n);
  Eigen::Map<Arr> o(out.data(), len);
  if (a_scalar || b_scalar) {
    const double s = a_scalar ? a.data()[0] : b.data()[0];
    const Eigen::Map<const Arr> t((a_scalar ? b : a).data().data(), len);
    switch (kind) {
      case BinaryKind::kAdd: o = t + s; break;
      case BinaryKind::kSub:
        if (a_scalar) o = s - t;
        else o = t - s;
        break;
      case BinaryKind::kMul: o = t * s; break;
    }
  } else {
    const Eigen::Map<const Arr> x(a.data().data(), len), y(b.data().data(), len);
    switch (kind) {
      case BinaryKind::kAdd: o = x + y; break;
      case BinaryKind::kSub: o = x - y; break;
      case BinaryKind::kMul: o = x * y; break;
    }
  }
  Tensor r = make_output(shape, std::move(out), name);
  if (Graph* g = recording_graph({&a, &b})) {
    NodePtr na = OpAccess::node(a), nb = OpAccess::node(b), nr = OpAccess::node(r);
    g->record({a, b}, r, [na, nb, nr, n, a_scalar, b_scalar, kind] {
      const auto& gr = nr->grad;
      if (na->requires_grad) {
        auto& ga = grad_of(*na);
        for (std::size_t i = 0; i < n; ++i) {
          const double d = kind == BinaryKind::kMul ? nb->value[b_scalar ? 0 : i] : 1.0;
          ga[a_scalar ? 0 : i] += gr[i] * d;
        }
      }
      if (nb->requires_grad) {
        auto& gb = grad_of(*nb);
        for (std::size_t i = 0; i < n; ++i) {
          double d = 1.0;
          if (kind == BinaryKind::kSub) d = -1.0;
          if (kind == BinaryKind::kMul) d = na->value[a_scalar ? 0 : i];
          gb[b_scalar ? 0 : i] += gr[i] * d;
        }
      }
    });
  }
  return r;
}

// Unary op from value and derivative functions; derivative sees (x, y).
template <typename F, typename D>
Tensor unary(const Tensor& x, const char* name, F f, D df) {
  auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  Tensor y = make_output(x.shape(), std::move(out), name);
  if (Graph* g = recording_graph({&x})) {
    NodePtr nx = OpAccess::node(x), ny = OpAccess::node(y);
    g->record({x}, y, [nx, ny, df] {
      auto& gx = grad_of(*nx);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += ny->grad[i] * df(nx->value[i], ny->value[i]);
    });
  }
  return y;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kMul, "mul"); }

Tensor scale(const Tensor& a, double factor) {
  return unary(a, "scale", [factor](double v) { return v * factor; },
               [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(a, "add_scalar", [value](double v) { return v + value; },
               [](double, double) { return 1.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return unary(x, "relu", [](double v) { return v > 0 ? v : 0.0; },
               [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Tensor gelu(const Tensor& x) {
  // tanh(u) = 1 - 2 / (exp(2u) + 1), which Eigen vectorizes. Work happens in
  // Eigen-owned (aligned) arrays: on unaligned storage Eigen peels a scalar
  // head whose length depends on the address, and scalar and packet exp can
  // round differently.
  using Arr = Eigen::Array<double, Eigen::Dynamic, 1>;
  const auto xv = x.data();
  const auto n = static_cast<Eigen::Index>(xv.size());
  const Arr v = Eigen::Map<const Arr>(xv.data(), n);
  const Arr u = kGeluC * (v + kGeluA * v.cube());
  auto t = std::make_shared<Arr>(1.0 - 2.0 / ((2.0 * u).exp() + 1.0));
  const Arr y_values = 0.5 * v * (1.0 + *t);
  Tensor y = make_output(x.shape(), std::vector<double>(y_values.begin(), y_values.end()), "gelu");
  if (Graph* g = recording_graph({&x})) {
    NodePtr nx = OpAccess::node(x), ny = OpAccess::node(y);
    g->record({x}, y, [nx, ny, t] {
      auto& gx = grad_of(*nx);
      const auto n = static_cast<Eigen::Index>(gx.size());
      const Arr v = Eigen::Map<const Arr>(nx->value.data(), n);
      const Arr gy = Eigen::Map<const Arr>(ny->grad.data(), n);
      const Arr d = gy * (0.5 * (1.0 + *t) + 0.5 * v * (1.0 - t->square()) * kGeluC * (1.0 + 3.0 * kGeluA * v.square()));
      for (Eigen::Index i = 0; i < n; ++i) gx[static_cast<std::size_t>(i)] += d[i];
    });
  }
  return y;
}

Tensor exp(const Tensor& x) {
  return unary(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive argument " + std::to_string(v));
  }
  return unary(x, "log", [](double v) { return std::log(v); },
               [](double v, double) { return 1.0 / v; });
}

Tensor log_sigmoid(const Tensor& x) {
  // log(sigmoid(v)) = min(v, 0) - log1p(exp(-|v|))
  return unary(
      x, "log_sigmoid",
      [](double v) { return std::min(v, 0.0) - std::log1p(std::exp(-std::abs(v))); },
      [](double v, double) {
        // d/dv = 1 - sigmoid(v) = sigmoid(-v)
        if (v >= 0) {
          const double e = std::exp(-v);
          return e / (1.0 + e);
        }
        return 1.0 / (1.0 + std::exp(v));
      });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (lo > hi) throw UsageError("clamp: lower bound exceeds upper bound");
  return unary(x, "clamp", [lo, hi](double v) { return std::clamp(v, lo, hi); },
               [lo, hi](double v, double) { return (v < lo || v > hi) ? 0.0 : 1.0; });
}

Tensor pow_scalar(const Tensor& x, double exponent) {
  if (exponent < 0) throw DomainError("pow_scalar: negative exponent");
  for (double v : x.data()) {
    if (v < 0) throw DomainError("pow_scalar: negative base " + std::to_string(v));
  }
  return unary(
      x, "pow_scalar", [exponent](double v) { return std::pow(v, exponent); },
      [exponent](double v, double) {
        if (exponent == 0.0) return 0.0;
        if (v == 0.0) return exponent == 1.0 ? 1.0 : 0.0;
        return exponent * std::pow(v, exponent - 1.0);
      });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor y = make_output({1}, {s}, "sum");
  if (Graph* g = recording_graph({&x})) {
    NodePtr nx = OpAccess::node(x), ny = OpAccess::node(y);
    g->record({x}, y, [nx, ny] {
      auto& gx = grad_of(*nx);
      for (double& v : gx) v += ny->grad[0];
    });
  }
  return y;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) throw ShapeError("dot: length mismatch");
  return sum(mul(a, reshape(b, a.shape())));
}

// ---------------------------------------------------------------------------
// Softmax

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw ShapeError("softmax: axis out of range for " + shape_str(x.shape()));
  const auto& shape = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t len = shape[axis];
  auto xv = x.data();
  std::vector<double> out(xv.size());
  if (inner == 1) {
    using Arr = Eigen::Array<double, Eigen::Dynamic, 1>;
    const auto n = static_cast<Eigen::Index>(len);
    // Aligned temporaries keep the result independent of addresses (see gelu).
    Arr row(n);
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(xv.begin() + o * len, xv.begin() + (o + 1) * len, row.begin());
      row = (row - row.maxCoeff()).exp();
      row /= row.sum();
      std::copy(row.begin(), row.end(), out.begin() + o * len);
    }
  }
  for (std::size_t o = 0; o < outer && inner > 1; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = xv[base];
      for (std::size_t k = 1; k < len; ++k) mx = std::max(mx, xv[base + k * inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        const double e = std::exp(xv[base + k * inner] - mx);
        out[base + k * inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < len; ++k) out[base + k * inner] /= total;
    }
  }
  Tensor y = make_output(shape, std::move(out), "softmax");
  if (Graph* g = recording_graph({&x})) {
    NodePtr nx = OpAccess::node(x), ny = OpAccess::node(y);
    g->record({x}, y, [nx, ny, outer, inner, len] {
      auto& gx = grad_of(*nx);
      const auto& yv = ny->value;
      const auto& gy = ny->grad;
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          double inner_prod = 0.0;
          for (std::size_t k = 0; k < len; ++k) inner_prod += gy[base + k * inner] * yv[base + k * inner];
          for (std::size_t k = 0; k < len; ++k) {
            const std::size_t idx = base + k * inner;
            gx[idx] += yv[idx] * (gy[idx] - inner_prod);
          }
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  Tensor y(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
  if (Graph* g = recording_graph({&x})) {
    NodePtr nx = OpAccess::node(x), ny = OpAccess::node(y);
    g->record({x}, y, [nx, ny] {
      auto& gx = grad_of(*nx);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += ny->grad[i];
    });
  }
  return y;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank2(x, "slice_rows");
  if (begin >= end || end > x.rows()) throw ShapeError("slice_rows: bad range");
  const std::size_t c = x.cols();
  auto xv = x.data();
  Tensor y({end - begin, c}, std::vector<double>(xv.begin() + begin * c, xv.begin() + end * c));
  if (Graph* g = recording_graph({&x})) {
    NodePtr nx = OpAccess::node(x), ny = OpAccess::node(y);
    g->record({x}, y, [nx, ny, begin, c] {
      auto& gx = grad_of(*nx);
      for (std::size_t i = 0; i < ny->grad.size(); ++i) gx[begin * c + i] += ny->grad[i];
    });
  }
  return y;
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank2(x, "slice_cols");
  if (begin >= end || end > x.cols()) throw ShapeError("slice_cols: bad range");
  const std::size_t r = x.rows(), c = x.cols(), w = end - begin;
  auto xv = x.data();
  std::vector<double> out(r * w);
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(xv.begin() + i * c + begin, w, out.begin() + i * w);
  Tensor y({r, w}, std::move(out));
  if (Graph* g = recording_graph({&x})) {
    NodePtr nx = OpAccess::node(x), ny = OpAccess::node(y);
    g->record({x}, y, [nx, ny, r, c, w, begin] {
      auto& gx = grad_of(*nx);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) gx[i * c + begin + j] += ny->grad[i * w + j];
    });
  }
  return y;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t c = parts.front().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) throw ShapeError("concat_rows: column counts differ");
    total += p.rows();
  }
  std::vector<double> out;
  out.reserve(total * c);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  Tensor y({total, c}, std::move(out));
  Graph* g = Graph::active();
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (g != nullptr && any) {
    std::vector<NodePtr> nodes;
    for (const auto& p : parts) nodes.push_back(OpAccess::node(p));
    NodePtr ny = OpAccess::node(y);
    g->record(parts, y, [nodes, ny] {
      std::size_t offset = 0;
      for (const auto& n : nodes) {
        if (n->requires_grad) {
          auto& gn = grad_of(*n);
          for (std::size_t i = 0; i < gn.size(); ++i) gn[i] += ny->grad[offset + i];
        }
        offset += n->value.size();
      }
    });
  }
  return y;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t r = parts.front().rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) throw ShapeError("concat_cols: row counts differ");
    total += p.cols();
  }
  std::vector<double> out(r * total);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    auto pv = p.data();
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(pv.begin() + i * w, w, out.begin() + i * total + offset);
    offset += w;
  }
  Tensor y({r, total}, std::move(out));
  Graph* g = Graph::active();
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (g != nullptr && any) {
    std::vector<NodePtr> nodes;
    for (const auto& p : parts) nodes.push_back(OpAccess::node(p));
    NodePtr ny = OpAccess::node(y);
    g->record(parts, y, [nodes, ny, r, total] {
      std::size_t off = 0;
      for (const auto& n : nodes) {
        const std::size_t w = n->shape[1];
        if (n->requires_grad) {
          auto& gn = grad_of(*n);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) gn[i * w + j] += ny->grad[i * total + off + j];
        }
        off += w;
      }
    });
  }
  return y;
}

Tensor normalize_rows(const Tensor& x, double eps, std::vector<std::size_t>* guarded_rows) {
  require_rank2(x, "normalize_rows");
  const std::size_t r = x.rows(), c = x.cols();
  auto xv = x.data();
  std::vector<double> out(r * c);
  std::vector<double> denom(r);
  std::vector<bool> guarded(r, false);
  for (std::size_t i = 0; i < r; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < c; ++j) ss += xv[i * c + j] * xv[i * c + j];
    const double norm = std::sqrt(ss);
    if (norm < eps) {
      guarded[i] = true;
      if (guarded_rows != nullptr) guarded_rows->push_back(i);
    }
    denom[i] = std::max(norm, eps);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] / denom[i];
  }
  Tensor y = make_output({r, c}, std::move(out), "normalize_rows");
  if (Graph* g = recording_graph({&x})) {
    NodePtr nx = OpAccess::node(x), ny = OpAccess::node(y);
    g->record({x}, y, [nx, ny, r, c, denom, guarded] {
      auto& gx = grad_of(*nx);
      for (std::size_t i = 0; i < r; ++i) {
        const double* gy = &ny->grad[i * c];
        const double* yv = &ny->value[i * c];
        if (guarded[i]) {
          for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += gy[j] / denom[i];
          continue;
        }
        double proj = 0.0;
        for (std::size_t j = 0; j < c; ++j) proj += gy[j] * yv[j];
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += (gy[j] - yv[j] * proj) / denom[i];
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Normalization layers

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank2(x, "layernorm");
  const std::size_t r = x.rows(), c = x.cols();
  if (gamma.numel() != c || beta.numel() != c) {
    throw ShapeError("layernorm: gamma/beta must have " + std::to_string(c) + " entries");
  }
  if (!(eps > 0)) throw ConfigError("layernorm: eps must be positive");
  auto xv = x.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  std::vector<double> xhat(r * c), inv_std(r), out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xv[i * c + j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = xv[i * c + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (xv[i * c + j] - mu) * inv_std[i];
      out[i * c + j] = xhat[i * c + j] * gv[j] + bv[j];
    }
  }
  Tensor y = make_output({r, c}, std::move(out), "layernorm");
  if (Graph* g = recording_graph({&x, &gamma, &beta})) {
    NodePtr nx = OpAccess::node(x), ng = OpAccess::node(gamma), nb = OpAccess::node(beta),
            ny = OpAccess::node(y);
    g->record({x, gamma, beta}, y, [nx, ng, nb, ny, r, c, xhat = std::move(xhat), inv_std] {
      const auto& gy = ny->grad;
      if (ng->requires_grad) {
        auto& gg = grad_of(*ng);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) gg[j] += gy[i * c + j] * xhat[i * c + j];
      }
      if (nb->requires_grad) {
        auto& gb = grad_of(*nb);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) gb[j] += gy[i * c + j];
      }
      if (nx->requires_grad) {
        auto& gx = grad_of(*nx);
        const double inv_c = 1.0 / static_cast<double>(c);
        for (std::size_t i = 0; i < r; ++i) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            const double gh = gy[i * c + j] * ng->value[j];
            m1 += gh;
            m2 += gh * xhat[i * c + j];
          }
          m1 *= inv_c;
          m2 *= inv_c;
          for (std::size_t j = 0; j < c; ++j) {
            const double gh = gy[i * c + j] * ng->value[j];
            gx[i * c + j] += inv_std[i] * (gh - m1 - xhat[i * c + j] * m2);
          }
        }
      }
    });
  }
  return y;
}

BatchNormStats BatchNormStats::fresh(std::size_t features) {
  return BatchNormStats{Tensor({features}, 0.0), Tensor({features}, 1.0)};
}

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats,
                 Mode mode, double momentum, double eps) {
  require_rank2(x, "batchnorm");
  const std::size_t b = x.rows(), c = x.cols();
  if (gamma.numel() != c || beta.numel() != c || stats.running_mean.numel() != c ||
      stats.running_var.numel() != c) {
    throw ShapeError("batchnorm: parameter/statistics width must be " + std::to_string(c));
  }
  if (mode == Mode::kTrain && b < 2) {
    throw ConfigError("batchnorm: train mode needs a batch of at least 2");
  }
  auto xv = x.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  std::vector<double> mu(c, 0.0), var(c, 0.0);
  if (mode == Mode::kTrain) {
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < c; ++j) mu[j] += xv[i * c + j];
    for (double& m : mu) m /= static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        const double d = xv[i * c + j] - mu[j];
        var[j] += d * d;
      }
    auto rm = stats.running_mean.data();
    auto rv = stats.running_var.data();
    for (std::size_t j = 0; j < c; ++j) {
      const double unbiased = var[j] / static_cast<double>(b - 1);
      var[j] /= static_cast<double>(b);
      rm[j] = (1.0 - momentum) * rm[j] + momentum * mu[j];
      rv[j] = (1.0 - momentum) * rv[j] + momentum * unbiased;
    }
  } else {
    auto rm = stats.running_mean.data();
    auto rv = stats.running_var.data();
    std::copy(rm.begin(), rm.end(), mu.begin());
    std::copy(rv.begin(), rv.end(), var.begin());
  }
  std::vector<double> inv_std(c), xhat(b * c), out(b * c);
  for (std::size_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (xv[i * c + j] - mu[j]) * inv_std[j];
      out[i * c + j] = xhat[i * c + j] * gv[j] + bv[j];
    }
  Tensor y = make_output({b, c}, std::move(out), "batchnorm");
  if (Graph* g = recording_graph({&x, &gamma, &beta})) {
    NodePtr nx = OpAccess::node(x), ng = OpAccess::node(gamma), nb = OpAccess::node(beta),
            ny = OpAccess::node(y);
    const bool batch_stats = mode == Mode::kTrain;
    g->record({x, gamma, beta}, y, [nx, ng, nb, ny, b, c, xhat = std::move(xhat), inv_std, batch_stats] {
      const auto& gy = ny->grad;
      if (ng->requires_grad) {
        auto& gg = grad_of(*ng);
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t j = 0; j < c; ++j) gg[j] += gy[i * c + j] * xhat[i * c + j];
      }
      if (nb->requires_grad) {
        auto& gb = grad_of(*nb);
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t j = 0; j < c; ++j) gb[j] += gy[i * c + j];
      }
      if (!nx->requires_grad) return;
      auto& gx = grad_of(*nx);
      if (!batch_stats) {
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += gy[i * c + j] * ng->value[j] * inv_std[j];
        return;
      }
      const double inv_b = 1.0 / static_cast<double>(b);
      for (std::size_t j = 0; j < c; ++j) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t i = 0; i < b; ++i) {
          const double gh = gy[i * c + j] * ng->value[j];
          m1 += gh;
          m2 += gh * xhat[i * c + j];
        }
        m1 *= inv_b;
        m2 *= inv_b;
        for (std::size_t i = 0; i < b; ++i) {
          const double gh = gy[i * c + j] * ng->value[j];
          gx[i * c + j] += inv_std[j] * (gh - m1 - xhat[i * c + j] * m2);
        }
      }
    });
  }
  return y;
}

Tensor dropout(const Tensor& x, double p, Mode mode, std::mt19937_64& rng) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: p must lie in [0, 1)");
  if (mode == Mode::kEval || p == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  const double factor = 1.0 / (1.0 - p);
  std::vector<double> mask(x.numel());
  for (double& m : mask) m = keep(rng) ? factor : 0.0;
  return mul(x, Tensor(x.shape(), std::move(mask)));
}

}  // namespace vcediff
