#include "vcediff/diff_attention.hpp"

#include <cmath>

namespace vcediff {

namespace {

void expect_shape(const Tensor& t, const Shape& shape, const char* name) {
  if (t.shape() != shape) {
    throw ShapeError(std::string("diff block: ") + name + " has shape " + shape_str(t.shape()) +
                     ", expected " + shape_str(shape));
  }
}

Tensor param(Shape shape, std::vector<double> values) {
  return Tensor::parameter(std::move(shape), std::move(values));
}

Tensor param_fill(Shape shape, double v) {
  const std::size_t n = shape_numel(shape);
  return param(std::move(shape), std::vector<double>(n, v));
}

Tensor copy_param(const Tensor& t) {
  Tensor c = t.detach();
  c.set_requires_grad(true);
  return c;
}

}  // namespace

std::vector<double> trunc_normal(std::size_t n, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(n);
  for (double& v : out) {
    double z = normal(rng);
    while (std::abs(z) > 2.0) z = normal(rng);
    v = z * stddev;
  }
  return out;
}

void DiffBlockWeights::validate() const {
  if (heads == 0 || heads % 2 != 0) {
    throw ConfigError("differential attention needs a positive even head count, got " +
                      std::to_string(heads));
  }
  const std::size_t d = w_q.rank() == 2 ? w_q.rows() : 0;
  if (d == 0 || d % heads != 0) {
    throw ConfigError("model dim " + std::to_string(d) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  const std::size_t dh = d / heads;
  for (const auto* t : {&w_q, &w_k, &w_v, &w_out}) expect_shape(*t, {d, d}, "projection");
  for (const auto* t : {&b_q, &b_k, &b_v, &b_out, &ln1_gamma, &ln1_beta, &ln2_gamma, &ln2_beta, &mlp_b2}) {
    expect_shape(*t, {d}, "bias/norm vector");
  }
  for (const auto* t : {&lambda_q1, &lambda_k1, &lambda_q2, &lambda_k2}) {
    expect_shape(*t, {dh}, "lambda vector");
  }
  if (mlp_w1.rank() != 2 || mlp_w1.cols() != d) throw ShapeError("diff block: mlp_w1 must be [hidden x d]");
  const std::size_t hidden = mlp_w1.rows();
  expect_shape(mlp_b1, {hidden}, "mlp_b1");
  expect_shape(mlp_w2, {d, hidden}, "mlp_w2");
}

DiffBlockWeights DiffBlockWeights::init(std::size_t d, std::size_t heads, double lambda_init,
                                        std::mt19937_64& rng) {
  if (heads == 0 || heads % 2 != 0 || d % heads != 0) {
    throw ConfigError("invalid block geometry d=" + std::to_string(d) + " heads=" + std::to_string(heads));
  }
  const std::size_t dh = d / heads;
  const std::size_t hidden = 4 * d;
  DiffBlockWeights w;
  w.heads = heads;
  w.lambda_init = lambda_init;
  w.w_q = param({d, d}, trunc_normal(d * d, 0.02, rng));
  w.w_k = param({d, d}, trunc_normal(d * d, 0.02, rng));
  w.w_v = param({d, d}, trunc_normal(d * d, 0.02, rng));
  w.w_out = param({d, d}, trunc_normal(d * d, 0.02, rng));
  w.b_q = param_fill({d}, 0.0);
  w.b_k = param_fill({d}, 0.0);
  w.b_v = param_fill({d}, 0.0);
  w.b_out = param_fill({d}, 0.0);
  w.lambda_q1 = param_fill({dh}, 0.0);
  w.lambda_k1 = param_fill({dh}, 0.0);
  w.lambda_q2 = param_fill({dh}, 0.0);
  w.lambda_k2 = param_fill({dh}, 0.0);
  w.ln1_gamma = param_fill({d}, 1.0);
  w.ln1_beta = param_fill({d}, 0.0);
  w.ln2_gamma = param_fill({d}, 1.0);
  w.ln2_beta = param_fill({d}, 0.0);
  w.mlp_w1 = param({hidden, d}, trunc_normal(hidden * d, 0.02, rng));
  w.mlp_b1 = param_fill({hidden}, 0.0);
  w.mlp_w2 = param({d, hidden}, trunc_normal(d * hidden, 0.02, rng));
  w.mlp_b2 = param_fill({d}, 0.0);
  return w;
}

DiffBlockWeights DiffBlockWeights::clone() const {
  DiffBlockWeights c = *this;
  c.w_q = copy_param(w_q);
  c.w_k = copy_param(w_k);
  c.w_v = copy_param(w_v);
  c.w_out = copy_param(w_out);
  c.b_q = copy_param(b_q);
  c.b_k = copy_param(b_k);
  c.b_v = copy_param(b_v);
  c.b_out = copy_param(b_out);
  c.lambda_q1 = copy_param(lambda_q1);
  c.lambda_k1 = copy_param(lambda_k1);
  c.lambda_q2 = copy_param(lambda_q2);
  c.lambda_k2 = copy_param(lambda_k2);
  c.ln1_gamma = copy_param(ln1_gamma);
  c.ln1_beta = copy_param(ln1_beta);
  c.ln2_gamma = copy_param(ln2_gamma);
  c.ln2_beta = copy_param(ln2_beta);
  c.mlp_w1 = copy_param(mlp_w1);
  c.mlp_b1 = copy_param(mlp_b1);
  c.mlp_w2 = copy_param(mlp_w2);
  c.mlp_b2 = copy_param(mlp_b2);
  return c;
}

std::vector<NamedTensor> DiffBlockWeights::named_parameters(const std::string& prefix) const {
  return {
      {prefix + "ln1_gamma", ln1_gamma}, {prefix + "ln1_beta", ln1_beta},
      {prefix + "w_q", w_q},             {prefix + "b_q", b_q},
      {prefix + "w_k", w_k},             {prefix + "b_k", b_k},
      {prefix + "w_v", w_v},             {prefix + "b_v", b_v},
      {prefix + "lambda_q1", lambda_q1}, {prefix + "lambda_k1", lambda_k1},
      {prefix + "lambda_q2", lambda_q2}, {prefix + "lambda_k2", lambda_k2},
      {prefix + "w_out", w_out},         {prefix + "b_out", b_out},
      {prefix + "ln2_gamma", ln2_gamma}, {prefix + "ln2_beta", ln2_beta},
      {prefix + "mlp_w1", mlp_w1},       {prefix + "mlp_b1", mlp_b1},
      {prefix + "mlp_w2", mlp_w2},       {prefix + "mlp_b2", mlp_b2},
  };
}

Tensor lambda_tensor(const DiffBlockWeights& w) {
  Tensor first = exp(dot(w.lambda_q1, w.lambda_k1));
  Tensor second = exp(dot(w.lambda_q2, w.lambda_k2));
  return add_scalar(sub(first, second), w.lambda_init);
}

double lambda_value(const DiffBlockWeights& w) { return lambda_tensor(w).item(); }

Tensor diff_attention(const Tensor& x, const DiffBlockWeights& w, const AttentionOptions& options,
                      AttentionTrace* trace) {
  return diff_attention(x, x, w, options, trace);
}

Tensor diff_attention(const Tensor& queries, const Tensor& context, const DiffBlockWeights& w,
                      const AttentionOptions& options, AttentionTrace* trace) {
  w.validate();
  const std::size_t d = w.model_dim();
  if (queries.rank() != 2 || queries.cols() != d || context.rank() != 2 || context.cols() != d) {
    throw ShapeError("diff_attention: inputs must be [N x " + std::to_string(d) + "]");
  }
  const std::size_t dh = w.head_dim();
  const std::size_t pairs = w.heads / 2;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor q = linear(queries, w.w_q, &w.b_q);
  // A key bias adds q.b_k to every score in a row, which softmax cancels, so
  // it is left out; its gradient is then exactly zero instead of rounding
  // noise.
  Tensor k = linear(context, w.w_k);
  Tensor v = linear(context, w.w_v, &w.b_v);
  Tensor lambda = lambda_tensor(w);
  if (trace != nullptr) {
    *trace = AttentionTrace{};
    trace->lambda = lambda.item();
  }

  std::vector<Tensor> outputs;
  outputs.reserve(pairs);
  for (std::size_t i = 0; i < pairs; ++i) {
    const std::size_t g1 = 2 * i * dh, g2 = (2 * i + 1) * dh;
    Tensor s1 = scale(matmul(slice_cols(q, g1, g1 + dh), transpose(slice_cols(k, g1, g1 + dh))), inv_sqrt);
    Tensor s2 = scale(matmul(slice_cols(q, g2, g2 + dh), transpose(slice_cols(k, g2, g2 + dh))), inv_sqrt);
    Tensor a1 = softmax(s1, 1);
    Tensor a2 = softmax(s2, 1);
    Tensor value = slice_cols(v, g1, g1 + 2 * dh);
    outputs.push_back(matmul(sub(a1, mul(a2, lambda)), value));
    if (trace != nullptr) {
      trace->group1_maps.push_back(a1.detach());
      trace->group2_maps.push_back(a2.detach());
      trace->values.push_back(value.detach());
    }
  }
  Tensor merged = pairs == 1 ? outputs.front() : concat_cols(outputs);
  if (options.scale_by_one_minus_lambda_init) merged = scale(merged, 1.0 - w.lambda_init);
  if (trace != nullptr) trace->pre_projection = merged.detach();
  return linear(merged, w.w_out, &w.b_out);
}

Tensor block_attend(const Tensor& x, const DiffBlockWeights& w, const AttentionOptions& options,
                    bool first_row_only) {
  Tensor normed = layernorm(x, w.ln1_gamma, w.ln1_beta);
  Tensor residual = first_row_only ? slice_rows(x, 0, 1) : x;
  Tensor queries = first_row_only ? slice_rows(normed, 0, 1) : normed;
  return add(residual, diff_attention(queries, normed, w, options));
}

Tensor block_mlp(const Tensor& h, const DiffBlockWeights& w) {
  Tensor hidden = gelu(linear(layernorm(h, w.ln2_gamma, w.ln2_beta), w.mlp_w1, &w.mlp_b1));
  return add(h, linear(hidden, w.mlp_w2, &w.mlp_b2));
}

Tensor block_forward(const Tensor& x, const DiffBlockWeights& w, const AttentionOptions& options,
                     bool first_row_only) {
  return block_mlp(block_attend(x, w, options, first_row_only), w);
}

QkvSplit decompose_qkv(const Tensor& w_qkv, const std::optional<Tensor>& b_qkv) {
  if (w_qkv.rank() != 2 || w_qkv.rows() % 3 != 0) {
    throw ShapeError("decompose_qkv: fused matrix row count must be divisible by 3, got " +
                     shape_str(w_qkv.shape()));
  }
  const std::size_t d = w_qkv.rows() / 3;
  QkvSplit split;
  split.w_q = slice_rows(w_qkv, 0, d).detach();
  split.w_k = slice_rows(w_qkv, d, 2 * d).detach();
  split.w_v = slice_rows(w_qkv, 2 * d, 3 * d).detach();
  if (b_qkv) {
    if (b_qkv->numel() != 3 * d) throw ShapeError("decompose_qkv: fused bias must have 3d entries");
    Tensor b = reshape(*b_qkv, {1, 3 * d});
    split.b_q = reshape(slice_cols(b, 0, d), {d}).detach();
    split.b_k = reshape(slice_cols(b, d, 2 * d), {d}).detach();
    split.b_v = reshape(slice_cols(b, 2 * d, 3 * d), {d}).detach();
  }
  return split;
}

Tensor stack_qkv(const QkvSplit& split) {
  return concat_rows({split.w_q, split.w_k, split.w_v}).detach();
}

DiffBlockWeights transfer_pretrained(const PretrainedBlock& pre, double lambda_init) {
  QkvSplit split = decompose_qkv(pre.w_qkv, pre.b_qkv);
  const std::size_t d = split.w_q.rows();
  if (split.w_q.cols() != d) throw ShapeError("transfer_pretrained: fused matrix must be [3d x d]");
  if (pre.heads == 0 || pre.heads % 2 != 0 || d % pre.heads != 0) {
    throw ConfigError("transfer_pretrained: head count must be even and divide d");
  }
  const std::size_t dh = d / pre.heads;
  DiffBlockWeights w;
  w.heads = pre.heads;
  w.lambda_init = lambda_init;
  w.w_q = copy_param(split.w_q);
  w.w_k = copy_param(split.w_k);
  w.w_v = copy_param(split.w_v);
  w.b_q = split.b_q ? copy_param(*split.b_q) : param_fill({d}, 0.0);
  w.b_k = split.b_k ? copy_param(*split.b_k) : param_fill({d}, 0.0);
  w.b_v = split.b_v ? copy_param(*split.b_v) : param_fill({d}, 0.0);
  w.w_out = copy_param(pre.w_out);
  w.b_out = copy_param(pre.b_out);
  w.lambda_q1 = param_fill({dh}, 0.0);
  w.lambda_k1 = param_fill({dh}, 0.0);
  w.lambda_q2 = param_fill({dh}, 0.0);
  w.lambda_k2 = param_fill({dh}, 0.0);
  w.ln1_gamma = copy_param(pre.ln1_gamma);
  w.ln1_beta = copy_param(pre.ln1_beta);
  w.ln2_gamma = copy_param(pre.ln2_gamma);
  w.ln2_beta = copy_param(pre.ln2_beta);
  w.mlp_w1 = copy_param(pre.mlp_w1);
  w.mlp_b1 = copy_param(pre.mlp_b1);
  w.mlp_w2 = copy_param(pre.mlp_w2);
  w.mlp_b2 = copy_param(pre.mlp_b2);
  w.validate();
  return w;
}

}  // namespace vcediff
