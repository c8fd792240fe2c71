#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vcediff/labels.hpp"

namespace vcediff {

using ProbRow = std::array<double, kNumClasses>;
using Thresholds = std::array<double, kNumClasses>;
using BinarySeq = std::vector<std::uint8_t>;

struct ScoreMatrix {
  std::string video_id;
  std::vector<ProbRow> probs;  // row t is frame t

  std::size_t frames() const { return probs.size(); }
  std::vector<double> column(std::size_t class_id) const;
  /// Throws DomainError if a probability is outside [0, 1] or not finite.
  void validate() const;
};

struct Run {
  std::size_t start = 0;
  std::size_t end = 0;  // inclusive
  std::size_t length() const { return end - start + 1; }
  bool operator==(const Run&) const = default;
};

struct Event {
  std::size_t class_id = 0;
  std::size_t start = 0;
  std::size_t end = 0;  // inclusive
  double score = 0.0;
  bool operator==(const Event&) const = default;
};

struct TemporalConfig {
  std::size_t window = 7;
  std::size_t max_gap = 5;
  std::size_t min_len = 3;

  void validate() const;
};

/// Thresholds filled with one value.
Thresholds uniform_thresholds(double value);
void validate_thresholds(const Thresholds& thr);

/// One sequence per class: bit t is probs[t][c] >= thr[c].
std::vector<BinarySeq> binarize(const ScoreMatrix& scores, const Thresholds& thr);

/// Majority over the window of up to w frames centred at t, truncated at the
/// borders; ties in truncated windows give 0. Even w is a ConfigError.
BinarySeq median_filter_binary(const BinarySeq& seq, std::size_t w);

/// Maximal runs of ones, sorted.
std::vector<Run> runs_from_binary(const BinarySeq& seq);
BinarySeq binary_from_runs(const std::vector<Run>& runs, std::size_t length);

/// Fuses neighbours whose gap (next.start - prev.end - 1) is at most
/// max_gap. Unsorted or overlapping input is a UsageError.
std::vector<Run> merge_gaps(const std::vector<Run>& runs, std::size_t max_gap);

std::vector<Run> drop_short(const std::vector<Run>& runs, std::size_t min_len);

/// Score of an event is the mean raw probability over its span.
std::vector<Event> score_events(const std::vector<Run>& runs, std::span<const double> probs,
                                std::size_t class_id);

/// median -> runs -> merge -> drop on one binary sequence.
std::vector<Run> postprocess(const BinarySeq& seq, const TemporalConfig& config);

/// binarize -> median -> merge -> drop -> score, all classes, sorted by
/// (class, start).
std::vector<Event> detect_events(const ScoreMatrix& scores, const Thresholds& thr, const TemporalConfig& config);

// ---------------------------------------------------------------------------
// Files

struct VideoEvents {
  std::string video_id;
  std::vector<Event> events;
};

/// One single-line document:
///   {"video_id": "...", "events": [{"label": "colon", "start_frame": 10,
///    "end_frame": 20, "score": 0.500000}, ...]}
/// Events are sorted by (label order, start); scores use 6 decimals.
std::string emit_events_json(const std::string& video_id, const std::vector<Event>& events);
VideoEvents parse_events_json(const std::string& text);

/// JSON Lines: one document per video.
void write_events_file(const std::filesystem::path& path, const std::vector<VideoEvents>& videos);
std::vector<VideoEvents> read_events_file(const std::filesystem::path& path);

/// Frame-score CSV: header "video_id,frame_index,<17 labels>", one row per
/// frame, frames of a video contiguous and numbered from 0.
void write_scores(const std::filesystem::path& path, const std::vector<ScoreMatrix>& videos);
std::vector<ScoreMatrix> read_scores(const std::filesystem::path& path);

/// 17 lines "label<TAB>threshold".
void write_thresholds(const std::filesystem::path& path, const Thresholds& thr);
Thresholds read_thresholds(const std::filesystem::path& path);

}  // namespace vcediff
