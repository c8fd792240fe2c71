#include "vcediff/model_check.hpp"

#include <chrono>

#include "vcediff/data.hpp"
#include "vcediff/errors.hpp"
#include "vcediff/model.hpp"
#include "vcediff/objectives.hpp"
#include "vcediff/rng.hpp"
#include "vcediff/training.hpp"

namespace vcediff {

namespace {

enum class Stage { kEmbed, kAttend, kMlp, kHead };

struct StageOf {
  Stage stage = Stage::kHead;
  std::size_t block = 0;
};

}  // namespace

ModelGradCheckResult model_gradcheck(const RunConfig& config, const ModelGradCheckOptions& options) {
  config.validate();
  if (options.batch == 0) throw ConfigError("gradcheck: batch must be positive");
  const auto start = std::chrono::steady_clock::now();

  std::mt19937_64 rng(derive_seed(options.seed, "gradcheck"));
  ModelWeights w = ModelWeights::init(config.model, rng);
  std::normal_distribution<double> noise(0.0, options.jitter);
  for (auto& p : w.named_parameters()) {
    for (double& v : p.tensor.data()) v += noise(rng);
  }
  {
    std::uniform_real_distribution<double> u(0.5, 1.5);
    for (double& v : w.bn_stats.running_mean.data()) v = noise(rng);
    for (double& v : w.bn_stats.running_var.data()) v = u(rng);
  }
  const TextEmbeddingMatrix text = default_text_embeddings(options.seed, config.model.feature_dim);

  SynthSpec spec = config.data.synth;
  spec.image_size = config.model.image_size;
  spec.seed = options.seed;
  std::vector<Image> images;
  std::vector<LabelVector> labels;
  for (std::size_t i = 0; i < options.batch; ++i) {
    FrameRecord r;
    r.video_id = "gradcheck";
    r.frame_index = i;
    for (std::size_t c = 0; c < kNumClasses; ++c) r.labels[c] = (c + i) % 5 == 0;
    images.push_back(synth_frame_image(spec, r));
    labels.push_back(r.labels);
  }
  const TargetMatrix smoothed = label_smooth(targets_from_labels(labels), config.loss.eps_smooth);
  Tensor targets({options.batch, kNumClasses});
  for (std::size_t i = 0; i < options.batch; ++i)
    for (std::size_t c = 0; c < kNumClasses; ++c) targets.at(i, c) = smoothed[i][c];
  std::vector<double> weights(kNumClasses);
  for (std::size_t c = 0; c < kNumClasses; ++c) weights[c] = 1.0 + static_cast<double>(c % 4);

  const std::uint64_t dropout_seed = derive_seed(options.seed, "dropout");
  auto head_loss = [&](const Tensor& class_rows) {
    std::mt19937_64 drop(dropout_seed);
    ForwardOptions fo;
    fo.dropout = Mode::kTrain;
    fo.batchnorm = Mode::kEval;
    fo.dropout_rng = &drop;
    const auto out = heads_forward(project_features(class_rows, w), w, text, fo);
    return total_loss(asymmetric_focal_loss(out.cls_logits, targets, weights, config.loss),
                      contrastive_bce(out.con_logits, targets, weights), config.loss);
  };

  AttentionOptions attn;
  attn.scale_by_one_minus_lambda_init = config.model.scale_attention_output;
  const std::size_t depth = w.blocks.size();

  // Runs image tokens from block `b` (its attend half, or its MLP half when
  // `from_mlp`) to the end, recording stage inputs when `cache` is set.
  std::vector<std::vector<Tensor>> block_in(options.batch), block_mid(options.batch);
  auto run_from = [&](std::size_t image, Tensor x, std::size_t b, bool from_mlp, bool cache) {
    for (; b < depth; ++b) {
      const bool last = b + 1 == depth;
      if (!from_mlp) {
        if (cache) block_in[image][b] = x;
        x = block_attend(x, w.blocks[b], attn, last);
      }
      if (cache) block_mid[image][b] = x;
      x = block_mlp(x, w.blocks[b]);
      from_mlp = false;
    }
    return x;
  };

  auto full_rows = [&](bool cache) {
    std::vector<Tensor> rows;
    for (std::size_t i = 0; i < options.batch; ++i) {
      if (cache) {
        block_in[i].assign(depth, Tensor());
        block_mid[i].assign(depth, Tensor());
      }
      rows.push_back(run_from(i, patch_embed(images[i], w), 0, false, cache));
    }
    return concat_rows(rows);
  };

  const auto params = w.named_parameters();
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.set_requires_grad(true);
    std::ranges::fill(t.grad(), 0.0);
  }
  {
    Graph g;
    Graph::Recording rec(g);
    g.backward(head_loss(full_rows(false)));
  }
  const Tensor cached_rows = full_rows(true);

  std::vector<StageOf> stages(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    const std::string& name = params[k].name;
    if (name == "patch_w" || name == "patch_b" || name == "cls_token" || name == "pos_embed") {
      stages[k] = {Stage::kEmbed, 0};
    } else if (name.starts_with("blocks.")) {
      const std::size_t dot = name.find('.', 7);
      const std::size_t b = std::stoul(name.substr(7, dot - 7));
      const std::string local = name.substr(dot + 1);
      const bool mlp = local.starts_with("ln2_") || local.starts_with("mlp_");
      stages[k] = {mlp ? Stage::kMlp : Stage::kAttend, b};
    }
  }

  auto evaluate = [&](std::size_t k, std::size_t) {
    const StageOf s = stages[k];
    if (s.stage == Stage::kHead) return head_loss(cached_rows).item();
    if (s.stage == Stage::kEmbed) return head_loss(full_rows(false)).item();
    std::vector<Tensor> rows;
    for (std::size_t i = 0; i < options.batch; ++i) {
      const bool mlp = s.stage == Stage::kMlp;
      rows.push_back(run_from(i, mlp ? block_mid[i][s.block] : block_in[i][s.block], s.block, mlp, false));
    }
    return head_loss(concat_rows(rows)).item();
  };

  FiniteDiffOptions fd;
  fd.step = options.step;
  fd.refine_above = options.refine_above;
  fd.refine_step = options.refine_step;
  ModelGradCheckResult result;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = finite_diff_check_with([&](std::size_t, std::size_t i) { return evaluate(k, i); },
                                          {params[k]}, fd);
    result.per_param.push_back({params[k].name, r.coordinates, r.max_rel_error, r.refined,
                                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()});
    result.overall.coordinates += r.coordinates;
    result.overall.refined += r.refined;
    if (r.max_rel_error > result.overall.max_rel_error || k == 0) {
      result.overall.max_rel_error = r.max_rel_error;
      result.overall.worst_name = r.worst_name;
      result.overall.worst_index = r.worst_index;
      result.overall.worst_analytic = r.worst_analytic;
      result.overall.worst_numeric = r.worst_numeric;
    }
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace vcediff
