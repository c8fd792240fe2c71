#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "vcediff/gradcheck.hpp"
#include "vcediff/tensor.hpp"

namespace vcediff {

inline constexpr double kDefaultLambdaInit = 0.8;

/// Parameters of one pre-norm transformer block whose self-attention is the
/// differential form
///   (softmax(Q1 K1^T / sqrt(d_h)) - lambda * softmax(Q2 K2^T / sqrt(d_h))) V.
///
/// Head layout: the h query/key heads of width d_h are taken in interleaved
/// pairs; pair i uses head 2i as group 1 and head 2i+1 as group 2, and reads
/// value columns [2i*d_h, (2i+2)*d_h). The h/2 pair outputs concatenate back
/// to width d.
struct DiffBlockWeights {
  std::size_t heads = 0;
  double lambda_init = kDefaultLambdaInit;

  Tensor w_q, w_k, w_v, w_out;  // [d x d], applied as x * W^T
  Tensor b_q, b_k, b_v, b_out;  // [d]
  Tensor lambda_q1, lambda_k1, lambda_q2, lambda_k2;  // [d_h]
  Tensor ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;    // [d]
  Tensor mlp_w1, mlp_b1;  // [4d x d], [4d]
  Tensor mlp_w2, mlp_b2;  // [d x 4d], [d]

  std::size_t model_dim() const { return w_q.rows(); }
  std::size_t head_dim() const { return model_dim() / heads; }

  /// Throws ConfigError for odd/zero head counts or d % h != 0 and
  /// ShapeError for inconsistent tensors.
  void validate() const;

  /// Truncated-normal (std 0.02) projections, zero biases, unit norms and
  /// zero lambda vectors.
  static DiffBlockWeights init(std::size_t model_dim, std::size_t heads, double lambda_init,
                               std::mt19937_64& rng);

  DiffBlockWeights clone() const;
  /// Trainable tensors under `prefix` + name (e.g. "blocks.0.w_q").
  std::vector<NamedTensor> named_parameters(const std::string& prefix) const;
};

/// A fused-QKV block as exported by a standard ViT.
struct PretrainedBlock {
  std::size_t heads = 0;
  Tensor w_qkv;                 // [3d x d]
  std::optional<Tensor> b_qkv;  // [3d]
  Tensor w_out, b_out;
  Tensor ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct QkvSplit {
  Tensor w_q, w_k, w_v;
  std::optional<Tensor> b_q, b_k, b_v;
};

struct AttentionOptions {
  /// Multiply pair outputs by (1 - lambda_init) before the output projection.
  /// Off by default; the plain difference is used.
  bool scale_by_one_minus_lambda_init = false;
};

/// Per-pair attention maps and the concatenated pre-projection output,
/// captured when a trace is passed to diff_attention.
struct AttentionTrace {
  double lambda = 0.0;
  std::vector<Tensor> group1_maps;
  std::vector<Tensor> group2_maps;
  std::vector<Tensor> values;
  Tensor pre_projection;
};

/// exp(lq1 . lk1) - exp(lq2 . lk2) + lambda_init as a differentiable scalar.
/// The mean over this single scalar is the identity.
Tensor lambda_tensor(const DiffBlockWeights& w);
double lambda_value(const DiffBlockWeights& w);

/// Differential self-attention of x [N x d], including the output projection.
Tensor diff_attention(const Tensor& x, const DiffBlockWeights& w, const AttentionOptions& options = {},
                      AttentionTrace* trace = nullptr);

/// Same, with queries taken from `queries` [M x d] and keys/values from
/// `context` [N x d].
Tensor diff_attention(const Tensor& queries, const Tensor& context, const DiffBlockWeights& w,
                      const AttentionOptions& options = {}, AttentionTrace* trace = nullptr);

/// x + attn(ln1(x)), then h + mlp(ln2(h)) with a GELU MLP. With
/// `first_row_only`, only token 0 is carried out of the block (keys and
/// values still use every token).
Tensor block_forward(const Tensor& x, const DiffBlockWeights& w, const AttentionOptions& options = {},
                     bool first_row_only = false);

/// The two residual halves of block_forward.
Tensor block_attend(const Tensor& x, const DiffBlockWeights& w, const AttentionOptions& options = {},
                    bool first_row_only = false);
Tensor block_mlp(const Tensor& h, const DiffBlockWeights& w);

/// Rows [0,d) -> w_q, [d,2d) -> w_k, [2d,3d) -> w_v; biases split alike.
QkvSplit decompose_qkv(const Tensor& w_qkv, const std::optional<Tensor>& b_qkv = std::nullopt);
Tensor stack_qkv(const QkvSplit& split);

/// Builds differential-block weights from a fused pretrained block. MLP and
/// norm tensors are copied bit-exactly and lambda vectors start at zero.
DiffBlockWeights transfer_pretrained(const PretrainedBlock& pretrained, double lambda_init);

/// Truncated normal sample (std `stddev`, cut at two standard deviations).
std::vector<double> trunc_normal(std::size_t n, double stddev, std::mt19937_64& rng);

}  // namespace vcediff
