#include "vcediff/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "vcediff/errors.hpp"
#include "vcediff/rng.hpp"

namespace vcediff {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::size_t kEvalBatch = 64;

std::vector<Image> images_of(const SynthSplit& split) {
  std::vector<Image> out;
  out.reserve(split.frames.size());
  for (const auto& f : split.frames) out.push_back(f.image);
  return out;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Tensor targets_tensor(const TargetMatrix& t) {
  Tensor out({t.size(), kNumClasses});
  for (std::size_t i = 0; i < t.size(); ++i)
    for (std::size_t c = 0; c < kNumClasses; ++c) out.at(i, c) = t[i][c];
  return out;
}

struct Objective {
  LossConfig cls_config;
  std::vector<double> cls_weights;
  std::vector<double> con_weights;
  LossConfig total_config;

  Tensor operator()(const ModelOutputs& out, const Tensor& targets) const {
    return total_loss(asymmetric_focal_loss(out.cls_logits, targets, cls_weights, cls_config),
                      contrastive_bce(out.con_logits, targets, con_weights), total_config);
  }
};

Objective make_objective(const RunConfig& config, const std::vector<double>& pos_w) {
  Objective o;
  o.cls_config = config.loss;
  o.total_config = config.loss;
  if (config.classification_loss == "bce") {
    o.cls_config.gamma_pos = 0.0;
    o.cls_config.gamma_neg = 0.0;
    o.cls_config.margin = 0.0;
    o.cls_weights.assign(kNumClasses, 1.0);
    o.con_weights.assign(kNumClasses, 1.0);
  } else {
    o.cls_weights = pos_w;
    o.con_weights = pos_w;
  }
  return o;
}

void copy_values(const std::vector<NamedTensor>& src, const std::vector<NamedTensor>& dst) {
  if (src.size() != dst.size()) throw ShapeError("parameter lists differ in length");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].name != dst[i].name || src[i].tensor.shape() != dst[i].tensor.shape()) {
      throw ShapeError("parameter mismatch at " + dst[i].name);
    }
    Tensor t = dst[i].tensor;
    t.assign(src[i].tensor.data());
  }
}

std::vector<LabelVector> labels_of(const std::vector<FrameRecord>& records) {
  std::vector<LabelVector> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.labels);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Datasets

TextEmbeddingMatrix default_text_embeddings(std::uint64_t seed, std::size_t feature_dim) {
  std::mt19937_64 rng(derive_seed(seed, "text"));
  return random_text_embeddings(feature_dim, rng);
}

Dataset dataset_from_synth(const SynthDataset& data, std::size_t feature_dim) {
  Dataset d;
  d.train = {records_of(data.train), images_of(data.train)};
  d.val = {records_of(data.val), images_of(data.val)};
  d.test = {records_of(data.test), images_of(data.test)};
  d.text = default_text_embeddings(data.spec.seed, feature_dim);
  return d;
}

void write_dataset(const fs::path& dir, const SynthDataset& data, const TextEmbeddingMatrix& text) {
  write_dataset(dir, data);
  write_text_embeddings(dir / "text_embeddings.txt", text);
}

void write_dataset(const fs::path& dir, const SynthDataset& data) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "synth_spec.json");
    if (!out) throw FormatError("cannot write " + (dir / "synth_spec.json").string());
    out << synth_spec_to_json(data.spec).dump(2) << '\n';
  }
  write_manifest(dir / "train.csv", records_of(data.train));
  write_manifest(dir / "val.csv", records_of(data.val));
  write_manifest(dir / "test.csv", records_of(data.test));
}

Split load_split(const fs::path& dir, const std::string& name) {
  Split s;
  s.records = read_manifest(dir / (name + ".csv"));
  std::optional<SynthSpec> spec;
  s.images.reserve(s.records.size());
  for (const auto& r : s.records) {
    if (!r.image_path.empty()) {
      s.images.push_back(read_ppm(dir / r.image_path));
      continue;
    }
    if (!spec) {
      const auto path = dir / "synth_spec.json";
      std::ifstream in(path);
      if (!in) {
        throw FormatError(name + ".csv: frame " + r.video_id + ":" + std::to_string(r.frame_index) +
                          " has no image_path and " + path.string() + " is missing");
      }
      json j;
      try {
        j = json::parse(in);
      } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
      }
      spec = synth_spec_from_json(j);
    }
    s.images.push_back(synth_frame_image(*spec, r));
  }
  return s;
}

Dataset load_dataset(const fs::path& dir, std::size_t feature_dim) {
  if (!fs::is_directory(dir)) throw FormatError("dataset directory not found: " + dir.string());
  Dataset d;
  d.train = load_split(dir, "train");
  d.val = load_split(dir, "val");
  d.test = load_split(dir, "test");
  const auto text_path = dir / "text_embeddings.txt";
  if (fs::exists(text_path)) {
    d.text = load_text_embeddings(text_path);
    if (d.text.rows.cols() != feature_dim) {
      throw FormatError(text_path.string() + ": embedding dimension " + std::to_string(d.text.rows.cols()) +
                        " does not match model feature_dim " + std::to_string(feature_dim));
    }
  } else {
    std::uint64_t seed = 42;
    std::ifstream in(dir / "synth_spec.json");
    if (in) seed = synth_spec_from_json(json::parse(in)).seed;
    d.text = default_text_embeddings(seed, feature_dim);
  }
  return d;
}

Dataset load_dataset(const DataConfig& config, std::size_t feature_dim) {
  if (!config.dataset.empty()) return load_dataset(fs::path(config.dataset), feature_dim);
  return dataset_from_synth(synth_dataset(config.synth), feature_dim);
}

// ---------------------------------------------------------------------------
// Checkpoints

ModelWeights ema_weights(const ModelWeights& raw, const EmaState& ema) {
  ModelWeights w = raw.clone();
  copy_values(ema.shadow, w.named_parameters());
  return w;
}

Checkpoint make_checkpoint(const RunConfig& config, const ModelWeights& raw, const ModelWeights& ema,
                           const OptimState* optim, std::size_t epoch, std::size_t best_epoch) {
  json meta;
  meta["format"] = "vcediff-checkpoint";
  meta["epoch"] = epoch;
  meta["best_epoch"] = best_epoch;
  meta["step"] = optim ? optim->step : 0;
  meta["inference_weights"] = "ema";
  meta["config"] = run_config_to_json(config);

  Checkpoint ckpt;
  ckpt.metadata = meta.dump(2);
  for (const auto& p : raw.named_parameters()) ckpt.tensors.push_back({"raw." + p.name, p.tensor.clone()});
  for (const auto& p : ema.named_parameters()) ckpt.tensors.push_back({"ema." + p.name, p.tensor.clone()});
  for (const auto& b : raw.buffers()) ckpt.tensors.push_back({"buffer." + b.name, b.tensor.clone()});
  if (optim) {
    for (auto& m : optim->moment_tensors()) ckpt.tensors.push_back(std::move(m));
  }
  return ckpt;
}

RunConfig config_from_checkpoint(const Checkpoint& ckpt) {
  json meta;
  try {
    meta = json::parse(ckpt.metadata);
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint metadata is not JSON: ") + e.what());
  }
  if (!meta.contains("config")) throw FormatError("checkpoint metadata has no config");
  return run_config_from_json(meta.at("config"));
}

ModelWeights weights_from_checkpoint(const Checkpoint& ckpt, const std::string& prefix) {
  const RunConfig config = config_from_checkpoint(ckpt);
  std::mt19937_64 unused(0);
  ModelWeights w = ModelWeights::init(config.model, unused);
  auto load = [&](const std::vector<NamedTensor>& targets, const std::string& pre) {
    for (const auto& t : targets) {
      const Tensor* src = ckpt.find(pre + t.name);
      if (!src) throw FormatError("checkpoint is missing tensor " + pre + t.name);
      if (src->shape() != t.tensor.shape()) {
        throw FormatError("checkpoint tensor " + pre + t.name + " has shape " + shape_str(src->shape()) +
                          ", expected " + shape_str(t.tensor.shape()));
      }
      Tensor dst = t.tensor;
      dst.assign(src->data());
    }
  };
  load(w.named_parameters(), prefix);
  load(w.buffers(), "buffer.");
  w.validate();
  return w;
}

// ---------------------------------------------------------------------------
// Evaluation helpers

std::vector<ScoreMatrix> predict_split(const ModelWeights& w, const Split& split, const TextEmbeddingMatrix& text) {
  if (split.records.size() != split.images.size()) throw UsageError("predict_split: records and images differ");
  std::vector<ScoreMatrix> out;
  for (std::size_t begin = 0; begin < split.images.size(); begin += kEvalBatch) {
    const std::size_t end = std::min(split.images.size(), begin + kEvalBatch);
    const Tensor probs = predict_probabilities(
        w, std::span<const Image>(split.images.data() + begin, end - begin), text);
    for (std::size_t i = begin; i < end; ++i) {
      const auto& r = split.records[i];
      if (out.empty() || out.back().video_id != r.video_id) {
        for (const auto& s : out) {
          if (s.video_id == r.video_id) throw FormatError("frames of video " + r.video_id + " are not contiguous");
        }
        out.push_back({r.video_id, {}});
      }
      auto& sm = out.back();
      if (r.frame_index != sm.probs.size()) {
        throw FormatError("video " + r.video_id + ": expected frame " + std::to_string(sm.probs.size()) +
                          ", found " + std::to_string(r.frame_index));
      }
      ProbRow row{};
      for (std::size_t c = 0; c < kNumClasses; ++c) row[c] = probs.at(i - begin, c);
      sm.probs.push_back(row);
    }
  }
  return out;
}

SplitEvaluation evaluate_split(const ModelWeights& w, const Split& split, const TextEmbeddingMatrix& text,
                               const RunConfig& config, const std::vector<double>& pos_w) {
  const Objective objective = make_objective(config, pos_w);
  std::vector<ProbRow> scores;
  scores.reserve(split.images.size());
  double loss_sum = 0.0;
  for (std::size_t begin = 0; begin < split.images.size(); begin += kEvalBatch) {
    const std::size_t end = std::min(split.images.size(), begin + kEvalBatch);
    const auto out =
        model_forward(w, std::span<const Image>(split.images.data() + begin, end - begin), text, ForwardOptions{});
    std::vector<LabelVector> labels;
    for (std::size_t i = begin; i < end; ++i) labels.push_back(split.records[i].labels);
    const Tensor loss = objective(out, targets_tensor(targets_from_labels(labels)));
    loss_sum += loss.item() * static_cast<double>(end - begin);
    const Tensor p = sigmoid(out.cls_logits);
    for (std::size_t i = 0; i < end - begin; ++i) {
      ProbRow row{};
      for (std::size_t c = 0; c < kNumClasses; ++c) row[c] = p.at(i, c);
      scores.push_back(row);
    }
  }
  SplitEvaluation e;
  e.loss = split.images.empty() ? 0.0 : loss_sum / static_cast<double>(split.images.size());
  e.metrics = frame_metrics(scores, labels_of(split.records), uniform_thresholds(0.5));
  return e;
}

// ---------------------------------------------------------------------------
// Training loop

TrainResult train(const RunConfig& config, const Dataset& data, const TrainOptions& options) {
  config.validate();
  const Split& train_split = data.train;
  if (train_split.records.empty()) throw ConfigError("training split is empty");
  if (train_split.records.size() != train_split.images.size()) throw UsageError("train: records and images differ");
  if (data.text.rows.cols() != config.model.feature_dim) {
    throw ConfigError("text embedding dimension does not match model.feature_dim");
  }
  for (const auto& img : train_split.images) {
    if (img.height != config.model.image_size || img.width != config.model.image_size) {
      throw ConfigError("dataset images are " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                        " but model.image_size is " + std::to_string(config.model.image_size));
    }
  }

  RngStreams rngs = seed_all(config.seed);
  TrainResult result;
  result.raw = ModelWeights::init(config.model, rngs.init);
  ModelWeights& w = result.raw;

  const auto freqs = class_frequencies(train_split.records);
  const auto pos_w = pos_weights(freqs, config.loss);
  const Objective objective = make_objective(config, pos_w);
  std::vector<double> sample_w = config.data.sampler == "sqrt"
                                     ? sampler_weights(train_split.records, freqs)
                                     : std::vector<double>(train_split.records.size(), 1.0);

  const auto& oc = config.optim;
  OptimState optim = OptimState::create(
      {{"backbone", w.backbone_parameters(), oc.lr_backbone, oc.weight_decay},
       {"head", w.head_parameters(), oc.lr_head, oc.weight_decay}},
      oc.adam);
  EmaState ema = EmaState::create(w.named_parameters(), oc.ema_decay);

  const std::size_t steps_per_epoch =
      oc.steps_per_epoch ? oc.steps_per_epoch : (train_split.records.size() + oc.batch_size - 1) / oc.batch_size;
  const std::size_t total = oc.epochs * steps_per_epoch;
  const std::size_t last_step = total - 1;

  std::ofstream log, step_log;
  if (!options.output_dir.empty()) {
    fs::create_directories(options.output_dir);
    log.open(options.output_dir / "run.log");
    step_log.open(options.output_dir / "step_losses.txt");
    if (!log || !step_log) throw FormatError("cannot write to " + options.output_dir.string());
    const std::string echo = options.config_text.empty() ? run_config_to_json(config).dump(2) : options.config_text;
    log << "config:\n" << echo << (echo.ends_with('\n') ? "" : "\n");
    log << "train_frames " << train_split.records.size() << " val_frames " << data.val.records.size()
        << " steps_per_epoch " << steps_per_epoch << " total_steps " << total << '\n';
  }

  const auto params = w.named_parameters();
  double best_ap = -1.0;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= oc.epochs; ++epoch) {
    EpochLog el;
    el.epoch = epoch;
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
      const auto idx = weighted_sample(sample_w, oc.batch_size, rngs.sampler);
      std::vector<Image> images;
      std::vector<LabelVector> labels;
      images.reserve(idx.size());
      for (std::size_t i : idx) {
        images.push_back(config.data.augment_enabled ? augment(train_split.images[i], rngs.augment, config.data.augment)
                                                     : train_split.images[i]);
        labels.push_back(train_split.records[i].labels);
      }
      TargetMatrix targets = targets_from_labels(labels);
      if (config.data.mixup_alpha > 0.0) {
        auto mixed = mixup(images, targets, config.data.mixup_alpha, rngs.mixup);
        images = std::move(mixed.images);
        targets = std::move(mixed.targets);
      }
      targets = label_smooth(targets, config.loss.eps_smooth);

      for (const auto& p : params) {
        Tensor t = p.tensor;
        t.set_requires_grad(true);
        // Allocates the buffer too; the key bias never enters the graph.
        std::ranges::fill(t.grad(), 0.0);
      }
      double loss_value = 0.0;
      {
        Graph g;
        Graph::Recording rec(g);
        ForwardOptions fo;
        fo.dropout = Mode::kTrain;
        fo.batchnorm = Mode::kTrain;
        fo.dropout_rng = &rngs.dropout;
        const auto out = model_forward(w, images, data.text, fo);
        const Tensor loss = objective(out, targets_tensor(targets));
        loss_value = loss.item();
        if (!std::isfinite(loss_value)) {
          throw NumericError("non-finite training loss " + format_double(loss_value) + " at epoch " +
                             std::to_string(epoch) + ", step " + std::to_string(step));
        }
        g.backward(loss);
      }
      const double lrs[2] = {onecycle_lr(step, last_step, oc.lr_backbone, oc.schedule),
                             onecycle_lr(step, last_step, oc.lr_head, oc.schedule)};
      if (s == 0) {
        el.lr_backbone_first = lrs[0];
        el.lr_head_first = lrs[1];
      }
      el.lr_backbone_last = lrs[0];
      el.lr_head_last = lrs[1];
      adamw_step(optim, lrs);
      ema_update(ema, params);

      loss_sum += loss_value;
      result.step_losses.push_back(loss_value);
      if (step_log.is_open()) step_log << format_double(loss_value) << '\n';
    }
    el.train_loss = loss_sum / static_cast<double>(steps_per_epoch);

    result.ema = ema_weights(w, ema);
    const auto ev = evaluate_split(result.ema, data.val, data.text, config, pos_w);
    el.val_loss = ev.loss;
    el.val_macro_ap = ev.metrics.macro.ap;
    el.val = ev.metrics;
    const bool improved = el.val_macro_ap > best_ap;
    if (improved) {
      best_ap = el.val_macro_ap;
      result.best_epoch = epoch;
      result.best_ema = result.ema.clone();
    }
    result.epochs.push_back(el);

    std::ostringstream line;
    line << "epoch " << epoch << " train_loss " << format_double(el.train_loss) << " val_loss "
         << format_double(el.val_loss) << " val_macro_ap " << format_double(el.val_macro_ap) << " lr_backbone "
         << format_double(el.lr_backbone_first) << ".." << format_double(el.lr_backbone_last) << " lr_head "
         << format_double(el.lr_head_first) << ".." << format_double(el.lr_head_last)
         << (improved ? " best" : "");
    if (log.is_open()) log << line.str() << '\n';
    if (options.progress) *options.progress << line.str() << '\n';

    if (!options.output_dir.empty()) {
      write_checkpoint(options.output_dir / "last.ckpt",
                       make_checkpoint(config, w, result.ema, &optim, epoch, result.best_epoch));
      if (improved) {
        write_checkpoint(options.output_dir / "best.ckpt",
                         make_checkpoint(config, w, result.ema, &optim, epoch, result.best_epoch));
      }
    }
  }
  if (log.is_open()) log << "best_epoch " << result.best_epoch << '\n';
  return result;
}

}  // namespace vcediff
