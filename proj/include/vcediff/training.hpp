#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "vcediff/checkpoint.hpp"
#include "vcediff/config.hpp"
#include "vcediff/evaluation.hpp"
#include "vcediff/model.hpp"

namespace vcediff {

struct Split {
  std::vector<FrameRecord> records;
  std::vector<Image> images;
};

struct Dataset {
  Split train, val, test;
  TextEmbeddingMatrix text;
};

/// Directory layout written by write_dataset:
///   synth_spec.json      generator spec (needed for frames without image_path)
///   train.csv val.csv test.csv    manifests
///   text_embeddings.txt  optional; seeded random rows when absent
/// Image paths in manifests are relative to the directory (binary PPM).
void write_dataset(const std::filesystem::path& dir, const SynthDataset& data, const TextEmbeddingMatrix& text);
/// Without text_embeddings.txt, so any feature_dim can load it.
void write_dataset(const std::filesystem::path& dir, const SynthDataset& data);
Dataset load_dataset(const std::filesystem::path& dir, std::size_t feature_dim);

/// The dataset named by the config, or the in-memory synthetic one.
Dataset load_dataset(const DataConfig& config, std::size_t feature_dim);
Dataset dataset_from_synth(const SynthDataset& data, std::size_t feature_dim);

/// Text rows used when a dataset ships none: random_text_embeddings seeded
/// with derive_seed(seed, "text").
TextEmbeddingMatrix default_text_embeddings(std::uint64_t seed, std::size_t feature_dim);

Split load_split(const std::filesystem::path& dir, const std::string& name);

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_macro_ap = 0.0;
  double lr_backbone_first = 0.0, lr_backbone_last = 0.0;
  double lr_head_first = 0.0, lr_head_last = 0.0;
  FrameMetrics val;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::vector<double> step_losses;
  std::size_t best_epoch = 0;
  ModelWeights raw;
  ModelWeights ema;       // final EMA weights
  ModelWeights best_ema;  // EMA weights at best_epoch
};

struct TrainOptions {
  /// Empty: nothing is written. Otherwise run.log, step_losses.txt,
  /// last.ckpt and best.ckpt land here.
  std::filesystem::path output_dir;
  /// Config text echoed at the top of run.log; the JSON dump when empty.
  std::string config_text;
  std::ostream* progress = nullptr;
};

/// Throws NumericError when a step produces a non-finite loss.
TrainResult train(const RunConfig& config, const Dataset& data, const TrainOptions& options = {});

/// Weights with the EMA shadow values and the raw model's batch-norm
/// statistics.
ModelWeights ema_weights(const ModelWeights& raw, const EmaState& ema);

/// Tensors "raw.*", "ema.*", "buffer.*" plus optimizer moments; metadata is
/// JSON with the config and "inference_weights": "ema".
Checkpoint make_checkpoint(const RunConfig& config, const ModelWeights& raw, const ModelWeights& ema,
                           const OptimState* optim, std::size_t epoch, std::size_t best_epoch);

/// Weights named `prefix` + parameter name (buffers from "buffer.*").
ModelWeights weights_from_checkpoint(const Checkpoint& ckpt, const std::string& prefix = "ema.");
RunConfig config_from_checkpoint(const Checkpoint& ckpt);

/// Mean loss and frame metrics of a split in eval mode (uniform 0.5 thresholds).
struct SplitEvaluation {
  double loss = 0.0;
  FrameMetrics metrics;
};
SplitEvaluation evaluate_split(const ModelWeights& w, const Split& split, const TextEmbeddingMatrix& text,
                               const RunConfig& config, const std::vector<double>& pos_w);

/// Per-frame probabilities in fixed batches of 64, grouped by video in
/// order of first appearance. Frames of a video must be 0..n-1 in order.
std::vector<ScoreMatrix> predict_split(const ModelWeights& w, const Split& split, const TextEmbeddingMatrix& text);

}  // namespace vcediff
