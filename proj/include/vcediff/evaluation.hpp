#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vcediff/data.hpp"
#include "vcediff/temporal.hpp"

namespace vcediff {

/// Un-interpolated AP: mean over positives of the precision at their rank,
/// ranking by descending score with ties kept in input order. No positives
/// gives 0.
double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// Mann-Whitney AUC with half credit for ties; 0 unless both classes occur.
double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct F1Result {
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

/// Predictions are score >= thr; 0/0 counts as 0.
F1Result f1_at(std::span<const double> scores, std::span<const std::uint8_t> labels, double thr);

/// Grid point k/100 for k in [first, 95].
double threshold_grid_value(std::size_t k);

/// Per class, the F1-maximising grid threshold (lowest on ties). Rare
/// classes (support below 1% of frames) search from 0.05, others from 0.10.
Thresholds threshold_search(const std::vector<ProbRow>& scores, const std::vector<LabelVector>& labels);
Thresholds threshold_search(const std::vector<ProbRow>& scores, const std::vector<LabelVector>& labels,
                            const std::array<bool, kNumClasses>& rare);
std::array<bool, kNumClasses> rare_classes(const std::vector<LabelVector>& labels);

struct ClassFrameMetrics {
  double ap = 0.0, auc = 0.0, f1 = 0.0, precision = 0.0, recall = 0.0;
  std::size_t support = 0;
};

struct FrameMetrics {
  std::array<ClassFrameMetrics, kNumClasses> per_class{};
  /// Mean over all 17 classes; zero-support classes count as 0.
  ClassFrameMetrics macro;
};

/// Mean of each column over all 17 classes; support is summed.
ClassFrameMetrics macro_average(const std::array<ClassFrameMetrics, kNumClasses>& per_class);

FrameMetrics frame_metrics(const std::vector<ProbRow>& scores, const std::vector<LabelVector>& labels,
                           const Thresholds& thr);

/// Inclusive-endpoint interval IoU. Different classes are a UsageError.
double temporal_iou(const Event& a, const Event& b);

struct TemporalMetrics {
  std::array<double, kNumClasses> ap{};
  std::array<std::size_t, kNumClasses> gt_count{};
  /// Mean AP over classes with at least one ground-truth event; 0 if none.
  double map = 0.0;
};

/// Predictions of each class are ranked by descending score across videos
/// and greedily matched to the unclaimed same-video ground truth with the
/// highest IoU >= iou_thr (first in ground-truth order on ties).
TemporalMetrics temporal_map(const std::vector<VideoEvents>& predictions, const std::vector<VideoEvents>& ground_truth,
                             double iou_thr);

/// Per-class TP flags in ranked order, exposed for testing.
std::vector<std::uint8_t> temporal_match_flags(const std::vector<VideoEvents>& predictions,
                                               const std::vector<VideoEvents>& ground_truth, std::size_t class_id,
                                               double iou_thr);

/// Ground-truth events of each video from per-frame labels (runs of each
/// label, score 1).
std::vector<VideoEvents> events_from_labels(const std::vector<FrameRecord>& records);

struct VideoMap {
  std::string video_id;
  std::size_t frames = 0;
  double map50 = 0.0, map95 = 0.0;
};

struct EvaluationReport {
  std::vector<VideoMap> videos;
  double overall_map50 = 0.0;  // mean over videos
  double overall_map95 = 0.0;
  FrameMetrics frame;
  std::string text;
  std::string frame_csv;     // Label,AP,AUC,F1,Prec,Rec,Sup
  std::string temporal_csv;  // video_id,frames,map50,map95
};

/// Per-video temporal mAP at 0.5 and 0.95 (overall = mean of the videos)
/// and the per-class frame table. `frame_counts` may be empty.
EvaluationReport evaluate(const std::vector<VideoEvents>& predictions, const std::vector<VideoEvents>& ground_truth,
                          const FrameMetrics& frame, const std::vector<std::size_t>& frame_counts = {});

/// Overall mAPs as the mean over report.videos.
void summarize(EvaluationReport& report);
/// Renders text and CSV for an already-filled report.
void render_report(EvaluationReport& report);

}  // namespace vcediff
