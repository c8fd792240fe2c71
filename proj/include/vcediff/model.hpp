#pragma once

#include <cmath>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vcediff/diff_attention.hpp"
#include "vcediff/image.hpp"
#include "vcediff/labels.hpp"
#include "vcediff/tensor.hpp"

namespace vcediff {

struct ModelConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t depth = 2;
  std::size_t model_dim = 64;
  std::size_t heads = 4;
  std::size_t feature_dim = 32;
  std::size_t num_classes = kNumClasses;
  std::size_t reduction = 16;
  double dropout_p = 0.4;
  double lambda_init = kDefaultLambdaInit;
  double tau_init = std::log(1.0 / 0.07);
  double tau_cap = 100.0;  // upper bound on exp(tau)
  bool scale_attention_output = false;

  static constexpr std::size_t kChannels = 3;

  void validate() const;
  std::size_t patches_per_side() const { return image_size / patch_size; }
  std::size_t num_patches() const { return patches_per_side() * patches_per_side(); }
  std::size_t num_tokens() const { return num_patches() + 1; }
  std::size_t patch_dim() const { return kChannels * patch_size * patch_size; }
  std::size_t excitation_dim() const { return feature_dim / reduction; }
};

/// Frozen class-text embeddings, one unit row per label.
struct TextEmbeddingMatrix {
  std::vector<std::string> labels;
  Tensor rows;  // [17 x feature_dim]
};

/// Format: "labels: <17 comma-separated names>", then 17 lines of
/// whitespace-separated reals. Rows are L2-normalized on load. Throws
/// FormatError naming the offending row or label.
TextEmbeddingMatrix parse_text_embeddings(std::istream& in, const std::string& source = "<stream>");
TextEmbeddingMatrix load_text_embeddings(const std::filesystem::path& path);
void write_text_embeddings(const std::filesystem::path& path, const TextEmbeddingMatrix& t);
/// Seeded Gaussian rows, normalized.
TextEmbeddingMatrix random_text_embeddings(std::size_t feature_dim, std::mt19937_64& rng);

struct ModelWeights {
  ModelConfig config;

  // backbone
  Tensor patch_w;    // [d x 3P^2]
  Tensor patch_b;    // [d]
  Tensor cls_token;  // [1 x d]
  Tensor pos_embed;  // [N x d]
  std::vector<DiffBlockWeights> blocks;
  Tensor norm_gamma, norm_beta;  // [d]
  Tensor proj_w;                 // [F x d]

  // head
  Tensor exc_w1;  // [F/r x F]
  Tensor exc_w2;  // [F x F/r]
  Tensor bn_gamma, bn_beta;
  BatchNormStats bn_stats;
  Tensor cls_w;  // [17 x F]
  Tensor cls_b;  // [17]
  Tensor tau;    // scalar

  /// Blocks come from synthesized fused-QKV blocks passed through
  /// transfer_pretrained; everything else is truncated normal (std 0.02) or
  /// the usual constant init.
  static ModelWeights init(const ModelConfig& config, std::mt19937_64& rng);

  ModelWeights clone() const;
  void validate() const;

  /// Parameter groups for the optimizer. The feature projection belongs to
  /// the backbone; excitation, classifier and temperature to the head.
  std::vector<NamedTensor> backbone_parameters() const;
  std::vector<NamedTensor> head_parameters() const;
  std::vector<NamedTensor> named_parameters() const;
  /// Non-trainable state (batch-norm running statistics).
  std::vector<NamedTensor> buffers() const;
};

/// Patches of a [3 x H x W] image as rows of [num_patches x 3P^2]. Patch
/// order is row-major over the grid; within a patch the layout is
/// channel, then row, then column.
Tensor image_patches(const Image& image, std::size_t patch_size);

/// Class token followed by projected patches, plus positional embeddings.
Tensor patch_embed(const Image& image, const ModelWeights& w);

/// Runs blocks [first, depth) on one image's tokens. The last block keeps
/// only the class token.
Tensor run_blocks(const Tensor& tokens, const ModelWeights& w, std::size_t first = 0);

/// Final norm and projection of class-token rows [B x d] -> [B x F].
Tensor project_features(const Tensor& class_rows, const ModelWeights& w);

/// Feature vector [F] of one image (eval semantics; no stochastic layers).
Tensor encode_image(const Image& image, const ModelWeights& w);

/// BN(x * sigmoid(W2 relu(W1 x))).
Tensor excitation(const Tensor& x, const Tensor& w1, const Tensor& w2, const Tensor& bn_gamma,
                  const Tensor& bn_beta, BatchNormStats& stats, Mode mode);

/// dropout(p) then x W^T + b.
Tensor classification_logits(const Tensor& features, const Tensor& w, const Tensor& b, double p,
                             Mode mode, std::mt19937_64& rng);

/// (x / ||x||) T^T min(exp(tau), cap). Zero rows are guarded with eps 1e-12
/// and reported through `guarded_rows`.
Tensor contrastive_logits(const Tensor& features, const Tensor& text_rows, const Tensor& tau,
                          double cap = 100.0, std::vector<std::size_t>* guarded_rows = nullptr);

struct ForwardOptions {
  Mode dropout = Mode::kEval;
  /// Train mode normalizes with batch statistics and updates the running
  /// statistics stored in the weights.
  Mode batchnorm = Mode::kEval;
  std::mt19937_64* dropout_rng = nullptr;  // required when dropout is kTrain
};

struct ModelOutputs {
  Tensor features;    // [B x F]
  Tensor cls_logits;  // [B x 17]
  Tensor con_logits;  // [B x 17]
  std::vector<std::size_t> guarded_rows;
};

ModelOutputs heads_forward(const Tensor& features, const ModelWeights& w, const TextEmbeddingMatrix& text,
                           const ForwardOptions& options);

ModelOutputs model_forward(const ModelWeights& w, std::span<const Image> images,
                           const TextEmbeddingMatrix& text, const ForwardOptions& options = {});

/// Per-frame class probabilities sigmoid(cls_logits) [B x 17], eval mode.
Tensor predict_probabilities(const ModelWeights& w, std::span<const Image> images,
                             const TextEmbeddingMatrix& text);

}  // namespace vcediff
