#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vcediff/errors.hpp"

namespace vcediff {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Graph;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a backward pass touches the node
  bool requires_grad = false;
  Graph* graph = nullptr;
  std::size_t id = 0;
};

}  // namespace detail

/// Dense row-major float64 tensor. Copies share storage (handle semantics);
/// use clone() for a deep copy.
class Tensor {
public:
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor parameter(Shape shape, std::vector<double> values);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->value.size(); }
  /// Rows/cols of a rank-2 tensor.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> data() { return node_->value; }
  std::span<const double> data() const { return node_->value; }
  double item() const;
  double at(std::size_t i, std::size_t j) const;
  double& at(std::size_t i, std::size_t j);

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; allocated (zero) on first access.
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();

  /// Id inside the graph currently recording this tensor, if any.
  std::optional<std::size_t> node_id() const;

  Tensor clone() const;
  /// Copy of the values with no graph linkage and requires_grad off.
  Tensor detach() const;
  /// Overwrite values in place (shape must match). Does not touch the graph.
  void assign(std::span<const double> values);

  bool shares_storage(const Tensor& other) const { return node_ == other.node_; }

  /// Throws NumericError naming `what` if any value is NaN/Inf.
  void check_finite(const char* what) const;

private:
  friend class Graph;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend struct OpAccess;
};

/// Tape of recorded operations. While a Graph::Recording guard is alive on a
/// thread, every op whose inputs require gradients is appended here in
/// execution order, which is also a topological order.
class Graph {
public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  ~Graph();

  class Recording {
  public:
    explicit Recording(Graph& graph);
    ~Recording();
    Recording(const Recording&) = delete;
    Recording& operator=(const Recording&) = delete;

  private:
    Graph* previous_;
  };

  static Graph* active();

  std::size_t op_count() const { return ops_.size(); }
  std::size_t node_count() const { return nodes_.size(); }

  /// Reverse-mode sweep from a scalar root. Leaf gradients accumulate across
  /// calls; intermediate gradients are recomputed each time.
  void backward(const Tensor& root);

  // Used by op implementations.
  void record(std::vector<Tensor> inputs, Tensor& output, std::function<void()> backward_rule);

private:
  struct Op {
    std::vector<std::size_t> inputs;
    std::size_t output;
    std::function<void()> backward_rule;
  };

  std::size_t track(const std::shared_ptr<detail::Node>& node);

  std::vector<std::shared_ptr<detail::Node>> nodes_;
  std::vector<bool> is_leaf_;
  std::vector<Op> ops_;
};

void backward(Graph& graph, const Tensor& root);

// ---------------------------------------------------------------------------
// Primitive operations. Every op is differentiable unless noted.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// y = x * w^T + b with x [n x in], w [out x in], b [out] (optional).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor* b = nullptr);

/// Elementwise ops support exact shape match or a one-element operand.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
/// tanh approximation.
Tensor gelu(const Tensor& x);
Tensor exp(const Tensor& x);
/// Throws DomainError for non-positive entries.
Tensor log(const Tensor& x);
/// log(sigmoid(x)) evaluated without overflow.
Tensor log_sigmoid(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);
/// x^exponent for x >= 0, exponent >= 0.
Tensor pow_scalar(const Tensor& x, double exponent);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor dot(const Tensor& a, const Tensor& b);

/// Numerically stable softmax along `axis` (max-subtracted).
Tensor softmax(const Tensor& x, std::size_t axis);

Tensor reshape(const Tensor& x, Shape shape);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);

/// Per-row x / max(||x||, eps). Rows whose norm falls below eps are reported
/// through `guarded_rows` when given.
Tensor normalize_rows(const Tensor& x, double eps, std::vector<std::size_t>* guarded_rows = nullptr);

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Normalizes over the last dimension of a rank-2 tensor; gamma/beta [cols].
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 double eps = kLayerNormEps);

enum class Mode { kTrain, kEval };

struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;

  static BatchNormStats fresh(std::size_t features);
};

/// Batch normalization over rows of x [batch x features]. Train mode uses the
/// biased batch variance for normalization and folds (mean, unbiased var) into
/// the running statistics with `momentum`; eval mode uses running statistics.
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 BatchNormStats& stats, Mode mode, double momentum = kBatchNormMomentum,
                 double eps = kBatchNormEps);

/// Inverted dropout. Identity in eval mode or when p == 0.
Tensor dropout(const Tensor& x, double p, Mode mode, std::mt19937_64& rng);

}  // namespace vcediff
