#include "vcediff/commands.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "vcediff/config.hpp"
#include "vcediff/errors.hpp"
#include "vcediff/evaluation.hpp"
#include "vcediff/model_check.hpp"
#include "vcediff/temporal.hpp"
#include "vcediff/training.hpp"

namespace vcediff {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_json(const std::string& text, const fs::path& path) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw FormatError("cannot write " + path.string());
}

void say(const CommandContext& ctx, const std::string& line) {
  if (!ctx.quiet && ctx.log) *ctx.log << line << '\n';
}

RunConfig config_or_default(const fs::path& path) {
  return path.empty() ? RunConfig{} : load_run_config(path);
}

// Labels of each scored frame, matched on (video_id, frame_index).
std::vector<LabelVector> labels_for(const std::vector<ScoreMatrix>& scores, const std::vector<FrameRecord>& records,
                                    std::vector<ProbRow>& rows) {
  std::map<std::pair<std::string, std::size_t>, const FrameRecord*> by_key;
  for (const auto& r : records) by_key[{r.video_id, r.frame_index}] = &r;
  std::vector<LabelVector> labels;
  for (const auto& s : scores) {
    for (std::size_t t = 0; t < s.frames(); ++t) {
      const auto it = by_key.find({s.video_id, t});
      if (it == by_key.end())
        throw FormatError("no labels for " + s.video_id + " frame " + std::to_string(t));
      labels.push_back(it->second->labels);
      rows.push_back(s.probs[t]);
    }
  }
  if (labels.size() != records.size())
    throw FormatError("scores cover " + std::to_string(labels.size()) + " frames, labels " +
                      std::to_string(records.size()));
  return labels;
}

}  // namespace

fs::path default_output(const CommandContext& ctx, const std::string& name, const fs::path& fallback) {
  if (!ctx.out.empty()) return ctx.out;
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) return fs::path(env) / name;
  return fallback;
}

int run_command(const std::function<void()>& body, std::ostream& err) {
  try {
    body();
    return kExitOk;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << '\n';
  } catch (const ShapeError& e) {
    err << "shape error: " << e.what() << '\n';
  } catch (const DomainError& e) {
    err << "domain error: " << e.what() << '\n';
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
  } catch (const fs::filesystem_error& e) {
    err << "file error: " << e.what() << '\n';
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitValidation;
}

fs::path cmd_synth(const fs::path& spec_path, const CommandContext& ctx) {
  SynthSpec spec = synth_spec_from_json(parse_json(read_text(spec_path), spec_path));
  if (ctx.seed) spec.seed = *ctx.seed;
  spec.validate();
  const fs::path out = default_output(ctx, "synth", "synth");
  const SynthDataset data = synth_dataset(spec);
  write_dataset(out, data);
  for (const auto& [name, split] : {std::pair{"train", &data.train}, {"val", &data.val}, {"test", &data.test}}) {
    write_events_file(out / (std::string(name) + "_events.jsonl"), events_from_labels(records_of(*split)));
  }
  say(ctx, "wrote " + std::to_string(data.train.frames.size()) + "/" + std::to_string(data.val.frames.size()) + "/" +
               std::to_string(data.test.frames.size()) + " train/val/test frames to " + out.string());
  return out;
}

fs::path cmd_train(const fs::path& config_path, const CommandContext& ctx) {
  std::string text = read_text(config_path);
  RunConfig config = run_config_from_json(parse_json(text, config_path));
  if (ctx.seed) {
    config.seed = *ctx.seed;
    if (!text.ends_with('\n')) text += '\n';
    text += "seed override: " + std::to_string(*ctx.seed) + '\n';
  }
  config.validate();
  const fs::path out = default_output(ctx, "train", config.output_dir);
  const Dataset data = load_dataset(config.data, config.model.feature_dim);
  TrainOptions options;
  options.output_dir = out;
  options.config_text = text;
  options.progress = ctx.quiet ? nullptr : ctx.log;
  const TrainResult r = train(config, data, options);
  const auto& best = r.epochs[r.best_epoch - 1];
  std::ostringstream line;
  line << "best epoch " << r.best_epoch << " val_macro_ap " << best.val_macro_ap << ", checkpoints in "
       << out.string();
  say(ctx, line.str());
  return out;
}

fs::path cmd_predict(const fs::path& checkpoint, const fs::path& dataset, const std::string& split,
                     const CommandContext& ctx) {
  if (split != "train" && split != "val" && split != "test") throw ConfigError("unknown split '" + split + "'");
  const Checkpoint ckpt = read_checkpoint(checkpoint);
  const RunConfig config = config_from_checkpoint(ckpt);
  const ModelWeights w = weights_from_checkpoint(ckpt, "ema.");
  const Dataset data = load_dataset(dataset, config.model.feature_dim);
  const Split& s = split == "train" ? data.train : split == "val" ? data.val : data.test;
  const auto scores = predict_split(w, s, data.text);
  const fs::path out = default_output(ctx, "scores.csv", "scores.csv");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_scores(out, scores);
  say(ctx, "scored " + std::to_string(s.records.size()) + " frames of " + std::to_string(scores.size()) +
               " videos to " + out.string());
  return out;
}

fs::path cmd_thresholds(const fs::path& scores, const fs::path& labels, const CommandContext& ctx) {
  const auto videos = read_scores(scores);
  std::vector<ProbRow> rows;
  const auto lab = labels_for(videos, read_manifest(labels), rows);
  const Thresholds thr = threshold_search(rows, lab);
  const fs::path out = default_output(ctx, "thresholds.txt", "thresholds.txt");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_thresholds(out, thr);
  say(ctx, "thresholds written to " + out.string());
  return out;
}

fs::path cmd_events(const fs::path& scores, const fs::path& thresholds, const fs::path& config,
                    const CommandContext& ctx) {
  const TemporalConfig tc = config_or_default(config).temporal;
  const Thresholds thr = read_thresholds(thresholds);
  std::vector<VideoEvents> videos;
  std::size_t count = 0;
  for (const auto& s : read_scores(scores)) {
    videos.push_back({s.video_id, detect_events(s, thr, tc)});
    count += videos.back().events.size();
  }
  const fs::path out = default_output(ctx, "events.jsonl", "events.jsonl");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_events_file(out, videos);
  say(ctx, std::to_string(count) + " events in " + std::to_string(videos.size()) + " videos written to " +
               out.string());
  return out;
}

fs::path cmd_eval(const fs::path& predictions, const fs::path& ground_truth, const fs::path& scores,
                  const fs::path& labels, const fs::path& thresholds, const CommandContext& ctx) {
  const auto videos = read_scores(scores);
  std::vector<ProbRow> rows;
  const auto lab = labels_for(videos, read_manifest(labels), rows);
  const Thresholds thr = thresholds.empty() ? uniform_thresholds(0.5) : read_thresholds(thresholds);
  std::vector<std::size_t> frames;
  for (const auto& v : videos) frames.push_back(v.frames());
  auto preds = read_events_file(predictions);
  auto gt = read_events_file(ground_truth);
  // Videos are reported in score-file order.
  std::map<std::string, std::size_t> order;
  for (std::size_t i = 0; i < videos.size(); ++i) order[videos[i].video_id] = i;
  for (const auto* set : {&preds, &gt}) {
    for (const auto& v : *set)
      if (!order.contains(v.video_id)) throw FormatError("events for unknown video " + v.video_id);
  }
  std::vector<VideoEvents> gt_sorted(videos.size()), pred_sorted(videos.size());
  for (std::size_t i = 0; i < videos.size(); ++i) gt_sorted[i].video_id = pred_sorted[i].video_id = videos[i].video_id;
  for (auto& v : gt) gt_sorted[order[v.video_id]].events = std::move(v.events);
  for (auto& v : preds) pred_sorted[order[v.video_id]].events = std::move(v.events);

  const EvaluationReport report = evaluate(pred_sorted, gt_sorted, frame_metrics(rows, lab, thr), frames);
  const fs::path out = default_output(ctx, "report", "report");
  fs::create_directories(out);
  write_text(out / "report.txt", report.text);
  write_text(out / "frame_metrics.csv", report.frame_csv);
  write_text(out / "temporal_metrics.csv", report.temporal_csv);
  if (!ctx.quiet && ctx.log) *ctx.log << report.text;
  return out;
}

double cmd_gradcheck(const fs::path& config, double tolerance, const CommandContext& ctx) {
  const RunConfig c = config_or_default(config);
  ModelGradCheckOptions options;
  options.seed = ctx.seed.value_or(c.seed);
  const auto r = model_gradcheck(c, options);
  if (!ctx.quiet && ctx.log) {
    auto& os = *ctx.log;
    const auto flags = os.flags();
    for (const auto& p : r.per_param) {
      os << std::left << std::setw(24) << p.name << std::right << std::setw(8) << p.coordinates << "  "
         << std::scientific << std::setprecision(3) << p.max_rel_error << '\n';
      os.flags(flags);
    }
    os << "coordinates " << r.overall.coordinates << " refined " << r.overall.refined << " seconds "
       << std::fixed << std::setprecision(1) << r.seconds << '\n';
    os.flags(flags);
    os << "worst " << r.overall.worst_name << "[" << r.overall.worst_index << "] analytic "
       << r.overall.worst_analytic << " numeric " << r.overall.worst_numeric << '\n';
  }
  if (ctx.log) {
    std::ostringstream line;
    line << "max relative error " << std::scientific << std::setprecision(6) << r.overall.max_rel_error;
    *ctx.log << line.str() << '\n';
  }
  if (!(r.overall.max_rel_error < tolerance)) {
    std::ostringstream msg;
    msg << "gradient check failed: " << r.overall.max_rel_error << " >= " << tolerance << " at "
        << r.overall.worst_name << "[" << r.overall.worst_index << "]";
    throw NumericError(msg.str());
  }
  return r.overall.max_rel_error;
}

}  // namespace vcediff
