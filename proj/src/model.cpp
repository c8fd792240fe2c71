#include "vcediff/model.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "vcediff/errors.hpp"

namespace vcediff {

namespace {

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

void expect_shape(const Tensor& t, const Shape& shape, const std::string& name) {
  if (t.shape() != shape) {
    throw ShapeError("model: " + name + " has shape " + shape_str(t.shape()) + ", expected " +
                     shape_str(shape));
  }
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

void normalize_in_place(std::span<double> row) {
  double n = 0.0;
  for (double v : row) n += v * v;
  n = std::sqrt(n);
  for (double& v : row) v /= n;
}

}  // namespace

void ModelConfig::validate() const {
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    throw ConfigError("image_size " + std::to_string(image_size) + " is not divisible by patch_size " +
                      std::to_string(patch_size));
  }
  if (depth == 0) throw ConfigError("depth must be at least 1");
  if (heads == 0 || heads % 2 != 0 || model_dim % heads != 0) {
    throw ConfigError("heads must be even and divide model_dim");
  }
  if (feature_dim == 0 || feature_dim > model_dim) {
    throw ConfigError("feature_dim must be in [1, model_dim]");
  }
  if (num_classes != kNumClasses) throw ConfigError("num_classes is fixed at 17");
  if (reduction == 0 || feature_dim / reduction < 1) {
    throw ConfigError("feature_dim / reduction must be at least 1");
  }
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout_p must be in [0, 1)");
  if (!std::isfinite(lambda_init) || !std::isfinite(tau_init)) {
    throw ConfigError("lambda_init and tau_init must be finite");
  }
  if (!(tau_cap > 0.0)) throw ConfigError("tau_cap must be positive");
}

// ---------------------------------------------------------------------------
// Text embeddings

TextEmbeddingMatrix parse_text_embeddings(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError(source + ": empty text-embedding file");
  const std::string prefix = "labels:";
  if (line.rfind(prefix, 0) != 0) throw FormatError(source + ": first line must start with 'labels:'");

  TextEmbeddingMatrix t;
  std::stringstream names(line.substr(prefix.size()));
  std::string name;
  while (std::getline(names, name, ',')) t.labels.push_back(trim(name));
  for (std::size_t i = 0; i < t.labels.size(); ++i) {
    if (!label_index(t.labels[i])) {
      throw FormatError(source + ": unknown label '" + t.labels[i] + "' in header");
    }
  }
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    if (i >= t.labels.size()) {
      throw FormatError(source + ": header is missing label '" + std::string(kLabelNames[i]) + "'");
    }
    if (t.labels[i] != kLabelNames[i]) {
      throw FormatError(source + ": header label " + std::to_string(i) + " is '" + t.labels[i] +
                        "', expected '" + std::string(kLabelNames[i]) + "'");
    }
  }
  if (t.labels.size() != kNumClasses) throw FormatError(source + ": header declares more than 17 labels");

  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    if (rows.size() == kNumClasses) throw FormatError(source + ": more than 17 embedding rows");
    std::istringstream fields(line);
    std::vector<double> row;
    std::string tok;
    while (fields >> tok) {
      double v = 0.0;
      try {
        std::size_t used = 0;
        v = std::stod(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw FormatError(source + ": row " + std::to_string(rows.size()) + " (" +
                          std::string(kLabelNames[rows.size()]) + "): bad number '" + tok + "'");
      }
      if (!std::isfinite(v)) {
        throw FormatError(source + ": row " + std::to_string(rows.size()) + " (" +
                          std::string(kLabelNames[rows.size()]) + "): non-finite entry");
      }
      row.push_back(v);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw FormatError(source + ": row " + std::to_string(rows.size()) + " (" +
                        std::string(kLabelNames[rows.size()]) + ") has " + std::to_string(row.size()) +
                        " values, expected " + std::to_string(rows.front().size()));
    }
    if (row.empty()) throw FormatError(source + ": row " + std::to_string(rows.size()) + " is empty");
    rows.push_back(std::move(row));
  }
  if (rows.size() < kNumClasses) {
    throw FormatError(source + ": " + std::to_string(rows.size()) + " embedding rows; missing label '" +
                      std::string(kLabelNames[rows.size()]) + "'");
  }
  const std::size_t f = rows.front().size();
  std::vector<double> flat;
  flat.reserve(kNumClasses * f);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    double n = 0.0;
    for (double v : rows[i]) n += v * v;
    if (!(n > 0.0)) {
      throw FormatError(source + ": row " + std::to_string(i) + " (" + std::string(kLabelNames[i]) +
                        ") has zero norm");
    }
    normalize_in_place(rows[i]);
    flat.insert(flat.end(), rows[i].begin(), rows[i].end());
  }
  t.rows = Tensor({kNumClasses, f}, std::move(flat));
  return t;
}

TextEmbeddingMatrix load_text_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open text-embedding file " + path.string());
  return parse_text_embeddings(in, path.string());
}

void write_text_embeddings(const std::filesystem::path& path, const TextEmbeddingMatrix& t) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "labels: ";
  for (std::size_t i = 0; i < kNumClasses; ++i) out << (i ? "," : "") << kLabelNames[i];
  out << '\n' << std::setprecision(17);
  for (std::size_t i = 0; i < t.rows.rows(); ++i) {
    for (std::size_t j = 0; j < t.rows.cols(); ++j) out << (j ? " " : "") << t.rows.at(i, j);
    out << '\n';
  }
}

TextEmbeddingMatrix random_text_embeddings(std::size_t feature_dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> flat(kNumClasses * feature_dim);
  for (double& v : flat) v = normal(rng);
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    normalize_in_place(std::span(flat).subspan(i * feature_dim, feature_dim));
  }
  TextEmbeddingMatrix t;
  for (auto n : kLabelNames) t.labels.emplace_back(n);
  t.rows = Tensor({kNumClasses, feature_dim}, std::move(flat));
  return t;
}

// ---------------------------------------------------------------------------
// Weights

ModelWeights ModelWeights::init(const ModelConfig& config, std::mt19937_64& rng) {
  config.validate();
  const std::size_t d = config.model_dim, f = config.feature_dim, k = config.num_classes;
  const std::size_t n = config.num_tokens(), pd = config.patch_dim(), e = config.excitation_dim();
  ModelWeights w;
  w.config = config;
  w.patch_w = param({d, pd}, trunc_normal(d * pd, 0.02, rng));
  w.patch_b = param_fill({d}, 0.0);
  w.cls_token = param({1, d}, trunc_normal(d, 0.02, rng));
  w.pos_embed = param({n, d}, trunc_normal(n * d, 0.02, rng));
  for (std::size_t b = 0; b < config.depth; ++b) {
    PretrainedBlock pre;
    pre.heads = config.heads;
    pre.w_qkv = Tensor({3 * d, d}, trunc_normal(3 * d * d, 0.02, rng));
    pre.b_qkv = Tensor({3 * d}, 0.0);
    pre.w_out = Tensor({d, d}, trunc_normal(d * d, 0.02, rng));
    pre.b_out = Tensor({d}, 0.0);
    pre.ln1_gamma = Tensor({d}, 1.0);
    pre.ln1_beta = Tensor({d}, 0.0);
    pre.ln2_gamma = Tensor({d}, 1.0);
    pre.ln2_beta = Tensor({d}, 0.0);
    pre.mlp_w1 = Tensor({4 * d, d}, trunc_normal(4 * d * d, 0.02, rng));
    pre.mlp_b1 = Tensor({4 * d}, 0.0);
    pre.mlp_w2 = Tensor({d, 4 * d}, trunc_normal(4 * d * d, 0.02, rng));
    pre.mlp_b2 = Tensor({d}, 0.0);
    w.blocks.push_back(transfer_pretrained(pre, config.lambda_init));
  }
  w.norm_gamma = param_fill({d}, 1.0);
  w.norm_beta = param_fill({d}, 0.0);
  w.proj_w = param({f, d}, trunc_normal(f * d, 0.02, rng));
  w.exc_w1 = param({e, f}, trunc_normal(e * f, 0.02, rng));
  w.exc_w2 = param({f, e}, trunc_normal(f * e, 0.02, rng));
  w.bn_gamma = param_fill({f}, 1.0);
  w.bn_beta = param_fill({f}, 0.0);
  w.bn_stats = BatchNormStats::fresh(f);
  w.cls_w = param({k, f}, trunc_normal(k * f, 0.02, rng));
  w.cls_b = param_fill({k}, 0.0);
  w.tau = param({1}, {config.tau_init});
  return w;
}

ModelWeights ModelWeights::clone() const {
  ModelWeights c = *this;
  c.patch_w = copy_param(patch_w);
  c.patch_b = copy_param(patch_b);
  c.cls_token = copy_param(cls_token);
  c.pos_embed = copy_param(pos_embed);
  for (auto& b : c.blocks) b = b.clone();
  c.norm_gamma = copy_param(norm_gamma);
  c.norm_beta = copy_param(norm_beta);
  c.proj_w = copy_param(proj_w);
  c.exc_w1 = copy_param(exc_w1);
  c.exc_w2 = copy_param(exc_w2);
  c.bn_gamma = copy_param(bn_gamma);
  c.bn_beta = copy_param(bn_beta);
  c.bn_stats = {bn_stats.running_mean.clone(), bn_stats.running_var.clone()};
  c.cls_w = copy_param(cls_w);
  c.cls_b = copy_param(cls_b);
  c.tau = copy_param(tau);
  return c;
}

void ModelWeights::validate() const {
  config.validate();
  const std::size_t d = config.model_dim, f = config.feature_dim, k = config.num_classes;
  const std::size_t e = config.excitation_dim();
  expect_shape(patch_w, {d, config.patch_dim()}, "patch_w");
  expect_shape(patch_b, {d}, "patch_b");
  expect_shape(cls_token, {1, d}, "cls_token");
  expect_shape(pos_embed, {config.num_tokens(), d}, "pos_embed");
  if (blocks.size() != config.depth) throw ShapeError("model: block count does not match depth");
  for (const auto& b : blocks) {
    b.validate();
    if (b.model_dim() != d || b.heads != config.heads) throw ShapeError("model: block geometry mismatch");
  }
  expect_shape(norm_gamma, {d}, "norm_gamma");
  expect_shape(norm_beta, {d}, "norm_beta");
  expect_shape(proj_w, {f, d}, "proj_w");
  expect_shape(exc_w1, {e, f}, "exc_w1");
  expect_shape(exc_w2, {f, e}, "exc_w2");
  expect_shape(bn_gamma, {f}, "bn_gamma");
  expect_shape(bn_beta, {f}, "bn_beta");
  expect_shape(bn_stats.running_mean, {f}, "bn running_mean");
  expect_shape(bn_stats.running_var, {f}, "bn running_var");
  expect_shape(cls_w, {k, f}, "cls_w");
  expect_shape(cls_b, {k}, "cls_b");
  expect_shape(tau, {1}, "tau");
}

std::vector<NamedTensor> ModelWeights::backbone_parameters() const {
  std::vector<NamedTensor> out = {
      {"patch_w", patch_w}, {"patch_b", patch_b}, {"cls_token", cls_token}, {"pos_embed", pos_embed}};
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (auto& p : blocks[b].named_parameters("blocks." + std::to_string(b) + ".")) out.push_back(p);
  }
  out.push_back({"norm_gamma", norm_gamma});
  out.push_back({"norm_beta", norm_beta});
  out.push_back({"proj_w", proj_w});
  return out;
}

std::vector<NamedTensor> ModelWeights::head_parameters() const {
  return {{"exc_w1", exc_w1}, {"exc_w2", exc_w2}, {"bn_gamma", bn_gamma}, {"bn_beta", bn_beta},
          {"cls_w", cls_w},   {"cls_b", cls_b},   {"tau", tau}};
}

std::vector<NamedTensor> ModelWeights::named_parameters() const {
  auto out = backbone_parameters();
  for (auto& p : head_parameters()) out.push_back(p);
  return out;
}

std::vector<NamedTensor> ModelWeights::buffers() const {
  return {{"bn_running_mean", bn_stats.running_mean}, {"bn_running_var", bn_stats.running_var}};
}

// ---------------------------------------------------------------------------
// Forward

Tensor image_patches(const Image& image, std::size_t p) {
  if (image.channels != ModelConfig::kChannels || image.height != image.width || p == 0 ||
      image.height % p != 0 || image.pixels.size() != image.channels * image.height * image.width) {
    throw ShapeError("image_patches: expected a square 3-channel image divisible into " +
                     std::to_string(p) + "-pixel patches");
  }
  const std::size_t grid = image.height / p;
  const std::size_t dim = image.channels * p * p;
  std::vector<double> out(grid * grid * dim);
  for (std::size_t gy = 0; gy < grid; ++gy) {
    for (std::size_t gx = 0; gx < grid; ++gx) {
      double* row = out.data() + (gy * grid + gx) * dim;
      for (std::size_t c = 0; c < image.channels; ++c) {
        for (std::size_t y = 0; y < p; ++y) {
          const double* src = &image.pixels[(c * image.height + gy * p + y) * image.width + gx * p];
          std::copy(src, src + p, row + (c * p + y) * p);
        }
      }
    }
  }
  return Tensor({grid * grid, dim}, std::move(out));
}

Tensor patch_embed(const Image& image, const ModelWeights& w) {
  const auto& cfg = w.config;
  if (image.height != cfg.image_size || image.width != cfg.image_size) {
    throw ShapeError("patch_embed: image is " + std::to_string(image.height) + "x" +
                     std::to_string(image.width) + ", model expects " + std::to_string(cfg.image_size));
  }
  Tensor patches = linear(image_patches(image, cfg.patch_size), w.patch_w, &w.patch_b);
  return add(concat_rows({w.cls_token, patches}), w.pos_embed);
}

Tensor run_blocks(const Tensor& tokens, const ModelWeights& w, std::size_t first) {
  AttentionOptions opts;
  opts.scale_by_one_minus_lambda_init = w.config.scale_attention_output;
  Tensor x = tokens;
  for (std::size_t b = first; b < w.blocks.size(); ++b) {
    x = block_forward(x, w.blocks[b], opts, b + 1 == w.blocks.size());
  }
  return x;
}

Tensor project_features(const Tensor& class_rows, const ModelWeights& w) {
  return linear(layernorm(class_rows, w.norm_gamma, w.norm_beta), w.proj_w);
}

Tensor encode_image(const Image& image, const ModelWeights& w) {
  Tensor f = project_features(run_blocks(patch_embed(image, w), w), w);
  return reshape(f, {w.config.feature_dim});
}

Tensor excitation(const Tensor& x, const Tensor& w1, const Tensor& w2, const Tensor& bn_gamma,
                  const Tensor& bn_beta, BatchNormStats& stats, Mode mode) {
  Tensor gate = sigmoid(linear(relu(linear(x, w1)), w2));
  return batchnorm(mul(x, gate), bn_gamma, bn_beta, stats, mode);
}

Tensor classification_logits(const Tensor& features, const Tensor& w, const Tensor& b, double p,
                             Mode mode, std::mt19937_64& rng) {
  return linear(dropout(features, p, mode, rng), w, &b);
}

Tensor contrastive_logits(const Tensor& features, const Tensor& text_rows, const Tensor& tau, double cap,
                          std::vector<std::size_t>* guarded_rows) {
  Tensor unit = normalize_rows(features, 1e-12, guarded_rows);
  Tensor scale_factor = clamp(exp(tau), 0.0, cap);
  return mul(matmul(unit, transpose(text_rows)), scale_factor);
}

ModelOutputs heads_forward(const Tensor& features, const ModelWeights& w, const TextEmbeddingMatrix& text,
                           const ForwardOptions& options) {
  if (options.dropout == Mode::kTrain && options.dropout_rng == nullptr && w.config.dropout_p > 0.0) {
    throw ConfigError("model_forward: train-mode dropout needs an rng");
  }
  if (text.rows.rank() != 2 || text.rows.rows() != kNumClasses || text.rows.cols() != w.config.feature_dim) {
    throw ShapeError("model_forward: text embeddings must be [17 x " +
                     std::to_string(w.config.feature_dim) + "]");
  }
  ModelOutputs out;
  out.features = features;
  BatchNormStats stats = w.bn_stats;  // handles; train mode updates the stored statistics
  Tensor excited = excitation(features, w.exc_w1, w.exc_w2, w.bn_gamma, w.bn_beta, stats, options.batchnorm);
  std::mt19937_64 unused;
  std::mt19937_64& rng = options.dropout_rng ? *options.dropout_rng : unused;
  out.cls_logits = classification_logits(excited, w.cls_w, w.cls_b, w.config.dropout_p, options.dropout, rng);
  out.con_logits = contrastive_logits(features, text.rows, w.tau, w.config.tau_cap, &out.guarded_rows);
  return out;
}

ModelOutputs model_forward(const ModelWeights& w, std::span<const Image> images,
                           const TextEmbeddingMatrix& text, const ForwardOptions& options) {
  if (images.empty()) throw UsageError("model_forward: empty batch");
  std::vector<Tensor> rows;
  rows.reserve(images.size());
  for (const Image& img : images) rows.push_back(run_blocks(patch_embed(img, w), w));
  Tensor class_rows = rows.size() == 1 ? rows.front() : concat_rows(rows);
  return heads_forward(project_features(class_rows, w), w, text, options);
}

Tensor predict_probabilities(const ModelWeights& w, std::span<const Image> images,
                             const TextEmbeddingMatrix& text) {
  return sigmoid(model_forward(w, images, text).cls_logits);
}

}  // namespace vcediff
