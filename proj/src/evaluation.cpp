#include "vcediff/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

#include "vcediff/errors.hpp"

namespace vcediff {

namespace {

void check_lengths(std::span<const double> scores, std::span<const std::uint8_t> labels, const char* what) {
  if (scores.size() != labels.size()) throw UsageError(std::string(what) + ": scores and labels differ in length");
}

std::vector<std::size_t> rank_desc(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

double ap_from_flags(const std::vector<std::uint8_t>& flags, std::size_t positives) {
  if (positives == 0) return 0.0;
  double sum = 0.0;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < flags.size(); ++k) {
    if (!flags[k]) continue;
    ++tp;
    sum += static_cast<double>(tp) / static_cast<double>(k + 1);
  }
  return sum / static_cast<double>(positives);
}

std::vector<std::uint8_t> label_column(const std::vector<LabelVector>& labels, std::size_t c) {
  std::vector<std::uint8_t> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = labels[i][c] ? 1 : 0;
  return out;
}

std::vector<double> score_column(const std::vector<ProbRow>& scores, std::size_t c) {
  std::vector<double> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = scores[i][c];
  return out;
}

struct Counts {
  std::size_t tp = 0, fp = 0, fn = 0;
};

F1Result f1_from_counts(const Counts& n) {
  F1Result r;
  if (n.tp + n.fp > 0) r.precision = static_cast<double>(n.tp) / static_cast<double>(n.tp + n.fp);
  if (n.tp + n.fn > 0) r.recall = static_cast<double>(n.tp) / static_cast<double>(n.tp + n.fn);
  if (2 * n.tp + n.fp + n.fn > 0 && n.tp > 0) {
    r.f1 = 2.0 * static_cast<double>(n.tp) / static_cast<double>(2 * n.tp + n.fp + n.fn);
  }
  return r;
}

}  // namespace

double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_lengths(scores, labels, "average_precision");
  std::vector<std::uint8_t> flags;
  std::size_t positives = 0;
  for (std::size_t i : rank_desc(scores)) {
    flags.push_back(labels[i] ? 1 : 0);
    positives += labels[i] ? 1 : 0;
  }
  return ap_from_flags(flags, positives);
}

double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_lengths(scores, labels, "roc_auc");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Wins counted per tie group: every negative strictly below gives 1, the
  // negatives in the same group give 1/2.
  double wins = 0.0;
  std::size_t pos = 0, neg_below = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i, group_pos = 0, group_neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]]) ++group_pos; else ++group_neg;
      ++j;
    }
    wins += static_cast<double>(group_pos) * (static_cast<double>(neg_below) + 0.5 * static_cast<double>(group_neg));
    pos += group_pos;
    neg_below += group_neg;
    i = j;
  }
  if (pos == 0 || neg_below == 0) return 0.0;
  return wins / (static_cast<double>(pos) * static_cast<double>(neg_below));
}

F1Result f1_at(std::span<const double> scores, std::span<const std::uint8_t> labels, double thr) {
  check_lengths(scores, labels, "f1_at");
  Counts n;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= thr;
    if (pred && labels[i]) ++n.tp;
    else if (pred) ++n.fp;
    else if (labels[i]) ++n.fn;
  }
  return f1_from_counts(n);
}

double threshold_grid_value(std::size_t k) { return static_cast<double>(k) / 100.0; }

std::array<bool, kNumClasses> rare_classes(const std::vector<LabelVector>& labels) {
  std::array<bool, kNumClasses> rare{};
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    std::size_t support = 0;
    for (const auto& l : labels) support += l[c] ? 1 : 0;
    rare[c] = 100 * support < labels.size();
  }
  return rare;
}

Thresholds threshold_search(const std::vector<ProbRow>& scores, const std::vector<LabelVector>& labels) {
  return threshold_search(scores, labels, rare_classes(labels));
}

Thresholds threshold_search(const std::vector<ProbRow>& scores, const std::vector<LabelVector>& labels,
                            const std::array<bool, kNumClasses>& rare) {
  if (scores.empty()) throw UsageError("threshold_search: empty validation set");
  if (scores.size() != labels.size()) throw UsageError("threshold_search: scores and labels differ in length");
  Thresholds thr{};
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const auto s = score_column(scores, c);
    const auto y = label_column(labels, c);
    const std::size_t first = rare[c] ? 5 : 10;
    double best = -1.0;
    for (std::size_t k = first; k <= 95; ++k) {
      const double f1 = f1_at(s, y, threshold_grid_value(k)).f1;
      if (f1 > best) {
        best = f1;
        thr[c] = threshold_grid_value(k);
      }
    }
  }
  return thr;
}

FrameMetrics frame_metrics(const std::vector<ProbRow>& scores, const std::vector<LabelVector>& labels,
                           const Thresholds& thr) {
  if (scores.size() != labels.size()) throw UsageError("frame_metrics: scores and labels differ in length");
  FrameMetrics m;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const auto s = score_column(scores, c);
    const auto y = label_column(labels, c);
    auto& pc = m.per_class[c];
    pc.support = static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
    pc.ap = average_precision(s, y);
    pc.auc = roc_auc(s, y);
    const auto f = f1_at(s, y, thr[c]);
    pc.f1 = f.f1;
    pc.precision = f.precision;
    pc.recall = f.recall;
  }
  m.macro = macro_average(m.per_class);
  return m;
}

ClassFrameMetrics macro_average(const std::array<ClassFrameMetrics, kNumClasses>& per_class) {
  ClassFrameMetrics m;
  for (const auto& pc : per_class) {
    m.ap += pc.ap;
    m.auc += pc.auc;
    m.f1 += pc.f1;
    m.precision += pc.precision;
    m.recall += pc.recall;
    m.support += pc.support;
  }
  const double n = static_cast<double>(kNumClasses);
  m.ap /= n;
  m.auc /= n;
  m.f1 /= n;
  m.precision /= n;
  m.recall /= n;
  return m;
}

double temporal_iou(const Event& a, const Event& b) {
  if (a.class_id != b.class_id) throw UsageError("temporal_iou: events of different classes");
  const std::size_t lo = std::max(a.start, b.start), hi = std::min(a.end, b.end);
  const std::size_t inter = hi >= lo ? hi - lo + 1 : 0;
  const std::size_t uni = (a.end - a.start + 1) + (b.end - b.start + 1) - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<std::uint8_t> temporal_match_flags(const std::vector<VideoEvents>& predictions,
                                               const std::vector<VideoEvents>& ground_truth, std::size_t class_id,
                                               double iou_thr) {
  std::map<std::string, std::vector<const Event*>> gt;
  for (const auto& v : ground_truth)
    for (const auto& e : v.events)
      if (e.class_id == class_id) gt[v.video_id].push_back(&e);

  struct Pred {
    const std::string* video;
    const Event* event;
  };
  std::vector<Pred> preds;
  for (const auto& v : predictions)
    for (const auto& e : v.events)
      if (e.class_id == class_id) preds.push_back({&v.video_id, &e});
  std::stable_sort(preds.begin(), preds.end(),
                   [](const Pred& a, const Pred& b) { return a.event->score > b.event->score; });

  std::map<std::string, std::vector<bool>> claimed;
  for (const auto& [video, events] : gt) claimed[video].assign(events.size(), false);

  std::vector<std::uint8_t> flags;
  for (const auto& p : preds) {
    auto it = gt.find(*p.video);
    std::size_t best = SIZE_MAX;
    double best_iou = -1.0;
    if (it != gt.end()) {
      auto& used = claimed[*p.video];
      for (std::size_t g = 0; g < it->second.size(); ++g) {
        if (used[g]) continue;
        const double iou = temporal_iou(*p.event, *it->second[g]);
        if (iou >= iou_thr && iou > best_iou) {
          best_iou = iou;
          best = g;
        }
      }
      if (best != SIZE_MAX) used[best] = true;
    }
    flags.push_back(best != SIZE_MAX ? 1 : 0);
  }
  return flags;
}

TemporalMetrics temporal_map(const std::vector<VideoEvents>& predictions, const std::vector<VideoEvents>& ground_truth,
                             double iou_thr) {
  if (!(iou_thr > 0.0 && iou_thr <= 1.0)) throw ConfigError("temporal_map: IoU threshold must lie in (0, 1]");
  TemporalMetrics m;
  std::size_t classes = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    for (const auto& v : ground_truth)
      for (const auto& e : v.events) m.gt_count[c] += e.class_id == c ? 1 : 0;
    if (m.gt_count[c] == 0) continue;
    m.ap[c] = ap_from_flags(temporal_match_flags(predictions, ground_truth, c, iou_thr), m.gt_count[c]);
    m.map += m.ap[c];
    ++classes;
  }
  if (classes > 0) m.map /= static_cast<double>(classes);
  return m;
}

std::vector<VideoEvents> events_from_labels(const std::vector<FrameRecord>& records) {
  std::vector<VideoEvents> out;
  std::map<std::string, std::size_t> index;
  std::vector<std::vector<const FrameRecord*>> frames;
  for (const auto& r : records) {
    auto [it, inserted] = index.emplace(r.video_id, out.size());
    if (inserted) {
      out.push_back({r.video_id, {}});
      frames.emplace_back();
    }
    frames[it->second].push_back(&r);
  }
  for (std::size_t v = 0; v < out.size(); ++v) {
    auto& fr = frames[v];
    std::stable_sort(fr.begin(), fr.end(),
                     [](const FrameRecord* a, const FrameRecord* b) { return a->frame_index < b->frame_index; });
    for (std::size_t i = 0; i < fr.size(); ++i) {
      if (fr[i]->frame_index != i) throw FormatError("video " + out[v].video_id + ": frame indices are not 0..n-1");
    }
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      BinarySeq seq(fr.size());
      for (std::size_t i = 0; i < fr.size(); ++i) seq[i] = fr[i]->labels[c] ? 1 : 0;
      for (const auto& run : runs_from_binary(seq)) out[v].events.push_back({c, run.start, run.end, 1.0});
    }
  }
  return out;
}

EvaluationReport evaluate(const std::vector<VideoEvents>& predictions, const std::vector<VideoEvents>& ground_truth,
                          const FrameMetrics& frame, const std::vector<std::size_t>& frame_counts) {
  if (!frame_counts.empty() && frame_counts.size() != ground_truth.size()) {
    throw UsageError("evaluate: one frame count per ground-truth video expected");
  }
  EvaluationReport r;
  r.frame = frame;
  for (std::size_t v = 0; v < ground_truth.size(); ++v) {
    const auto& gt = ground_truth[v];
    std::vector<VideoEvents> pred;
    for (const auto& p : predictions)
      if (p.video_id == gt.video_id) pred.push_back(p);
    VideoMap vm;
    vm.video_id = gt.video_id;
    vm.frames = frame_counts.empty() ? 0 : frame_counts[v];
    vm.map50 = temporal_map(pred, {gt}, 0.5).map;
    vm.map95 = temporal_map(pred, {gt}, 0.95).map;
    r.videos.push_back(vm);
  }
  summarize(r);
  render_report(r);
  return r;
}

void summarize(EvaluationReport& r) {
  r.overall_map50 = r.overall_map95 = 0.0;
  for (const auto& v : r.videos) {
    r.overall_map50 += v.map50;
    r.overall_map95 += v.map95;
  }
  if (!r.videos.empty()) {
    r.overall_map50 /= static_cast<double>(r.videos.size());
    r.overall_map95 /= static_cast<double>(r.videos.size());
  }
}

namespace {

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

std::string lpad(std::string s, std::size_t width) {
  if (s.size() < width) s.insert(0, width - s.size(), ' ');
  return s;
}

}  // namespace

void render_report(EvaluationReport& r) {
  std::size_t total_frames = 0;
  for (const auto& v : r.videos) total_frames += v.frames;

  std::string text = "Temporal mAP\n";
  text += pad("Video ID", 24) + lpad("Frames", 10) + lpad("mAP@0.5", 10) + lpad("mAP@0.95", 10) + "\n";
  std::string tcsv = "video_id,frames,map50,map95\n";
  for (const auto& v : r.videos) {
    text += pad(v.video_id, 24) + lpad(std::to_string(v.frames), 10) + lpad(fmt("%.4f", v.map50), 10) +
            lpad(fmt("%.4f", v.map95), 10) + "\n";
    tcsv += v.video_id + "," + std::to_string(v.frames) + "," + fmt("%.6f", v.map50) + "," + fmt("%.6f", v.map95) + "\n";
  }
  text += pad("Average", 24) + lpad(std::to_string(total_frames), 10) + lpad(fmt("%.4f", r.overall_map50), 10) +
          lpad(fmt("%.4f", r.overall_map95), 10) + "\n";
  tcsv += "overall," + std::to_string(total_frames) + "," + fmt("%.6f", r.overall_map50) + "," +
          fmt("%.6f", r.overall_map95) + "\n";

  text += "\nFrame metrics\n";
  text += pad("Label", 20);
  for (const char* h : {"AP", "AUC", "F1", "Prec", "Rec", "Sup"}) text += lpad(h, 8);
  text += "\n";
  std::string fcsv = "Label,AP,AUC,F1,Prec,Rec,Sup\n";
  auto row = [&](const std::string& name, const ClassFrameMetrics& m, bool with_support) {
    text += pad(name, 20);
    for (double v : {m.ap, m.auc, m.f1, m.precision, m.recall}) text += lpad(fmt("%.3f", v), 8);
    text += lpad(with_support ? std::to_string(m.support) : "-", 8) + "\n";
    fcsv += name;
    for (double v : {m.ap, m.auc, m.f1, m.precision, m.recall}) fcsv += "," + fmt("%.6f", v);
    fcsv += "," + (with_support ? std::to_string(m.support) : std::string()) + "\n";
  };
  for (std::size_t c = 0; c < kNumClasses; ++c) row(std::string(kLabelNames[c]), r.frame.per_class[c], true);
  row("Macro avg.", r.frame.macro, false);

  r.text = std::move(text);
  r.frame_csv = std::move(fcsv);
  r.temporal_csv = std::move(tcsv);
}

}  // namespace vcediff
