#include "vcediff/temporal.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "vcediff/errors.hpp"

namespace vcediff {

std::vector<double> ScoreMatrix::column(std::size_t class_id) const {
  std::vector<double> out(probs.size());
  for (std::size_t t = 0; t < probs.size(); ++t) out[t] = probs[t][class_id];
  return out;
}

void ScoreMatrix::validate() const {
  for (std::size_t t = 0; t < probs.size(); ++t)
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      const double p = probs[t][c];
      if (!(p >= 0.0 && p <= 1.0)) {
        throw DomainError("scores for " + video_id + ": frame " + std::to_string(t) + " class " +
                          std::string(kLabelNames[c]) + " is not a probability");
      }
    }
}

void TemporalConfig::validate() const {
  if (window == 0 || window % 2 == 0) throw ConfigError("temporal: median window must be odd and >= 1");
  if (min_len == 0) throw ConfigError("temporal: min_len must be >= 1");
}

Thresholds uniform_thresholds(double value) {
  Thresholds t;
  t.fill(value);
  return t;
}

void validate_thresholds(const Thresholds& thr) {
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (!(thr[c] >= 0.05 && thr[c] <= 0.95)) {
      throw DomainError("threshold for " + std::string(kLabelNames[c]) + " outside [0.05, 0.95]");
    }
  }
}

std::vector<BinarySeq> binarize(const ScoreMatrix& scores, const Thresholds& thr) {
  validate_thresholds(thr);
  std::vector<BinarySeq> out(kNumClasses, BinarySeq(scores.frames(), 0));
  for (std::size_t t = 0; t < scores.frames(); ++t)
    for (std::size_t c = 0; c < kNumClasses; ++c) out[c][t] = scores.probs[t][c] >= thr[c] ? 1 : 0;
  return out;
}

BinarySeq median_filter_binary(const BinarySeq& seq, std::size_t w) {
  if (w == 0 || w % 2 == 0) throw ConfigError("median filter window must be odd, got " + std::to_string(w));
  const std::size_t n = seq.size(), half = w / 2;
  std::vector<std::size_t> prefix(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + (seq[i] ? 1 : 0);
  BinarySeq out(n, 0);
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t lo = t >= half ? t - half : 0;
    const std::size_t hi = std::min(n, t + half + 1);
    const std::size_t ones = prefix[hi] - prefix[lo];
    out[t] = 2 * ones > hi - lo ? 1 : 0;
  }
  return out;
}

std::vector<Run> runs_from_binary(const BinarySeq& seq) {
  std::vector<Run> runs;
  std::size_t t = 0;
  while (t < seq.size()) {
    if (!seq[t]) {
      ++t;
      continue;
    }
    std::size_t e = t;
    while (e + 1 < seq.size() && seq[e + 1]) ++e;
    runs.push_back({t, e});
    t = e + 1;
  }
  return runs;
}

BinarySeq binary_from_runs(const std::vector<Run>& runs, std::size_t length) {
  BinarySeq out(length, 0);
  for (const auto& r : runs) {
    if (r.end >= length || r.start > r.end) throw UsageError("binary_from_runs: run outside the sequence");
    std::fill(out.begin() + static_cast<std::ptrdiff_t>(r.start), out.begin() + static_cast<std::ptrdiff_t>(r.end + 1), 1);
  }
  return out;
}

std::vector<Run> merge_gaps(const std::vector<Run>& runs, std::size_t max_gap) {
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (runs[i].start > runs[i].end) throw UsageError("merge_gaps: run with start > end");
    if (i > 0 && runs[i].start <= runs[i - 1].end) throw UsageError("merge_gaps: runs must be sorted and disjoint");
  }
  std::vector<Run> out;
  for (const auto& r : runs) {
    if (!out.empty() && r.start - out.back().end - 1 <= max_gap) {
      out.back().end = r.end;
    } else {
      out.push_back(r);
    }
  }
  return out;
}

std::vector<Run> drop_short(const std::vector<Run>& runs, std::size_t min_len) {
  if (min_len == 0) throw ConfigError("drop_short: min_len must be >= 1");
  std::vector<Run> out;
  for (const auto& r : runs)
    if (r.length() >= min_len) out.push_back(r);
  return out;
}

std::vector<Event> score_events(const std::vector<Run>& runs, std::span<const double> probs, std::size_t class_id) {
  if (class_id >= kNumClasses) throw UsageError("score_events: class id out of range");
  std::vector<Event> out;
  for (const auto& r : runs) {
    if (r.start > r.end || r.end >= probs.size()) throw UsageError("score_events: run outside the score column");
    double sum = 0.0;
    for (std::size_t t = r.start; t <= r.end; ++t) sum += probs[t];
    out.push_back({class_id, r.start, r.end, sum / static_cast<double>(r.length())});
  }
  return out;
}

std::vector<Run> postprocess(const BinarySeq& seq, const TemporalConfig& config) {
  config.validate();
  return drop_short(merge_gaps(runs_from_binary(median_filter_binary(seq, config.window)), config.max_gap),
                    config.min_len);
}

std::vector<Event> detect_events(const ScoreMatrix& scores, const Thresholds& thr, const TemporalConfig& config) {
  config.validate();
  auto bits = binarize(scores, thr);
  std::vector<Event> events;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    auto col = scores.column(c);
    auto scored = score_events(postprocess(bits[c], config), col, c);
    events.insert(events.end(), scored.begin(), scored.end());
  }
  return events;
}

// ---------------------------------------------------------------------------
// Files

namespace {

std::string format_fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string format_exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, sep)) fields.push_back(field);
  if (!line.empty() && line.back() == sep) fields.emplace_back();
  return fields;
}

double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) throw FormatError(where + ": bad number '" + s + "'");
  return v;
}

std::size_t parse_index(const std::string& s, const std::string& where) {
  std::size_t v = 0;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty()) throw FormatError(where + ": bad integer '" + s + "'");
  return v;
}

}  // namespace

std::string emit_events_json(const std::string& video_id, const std::vector<Event>& events) {
  std::vector<Event> sorted = events;
  for (const auto& e : sorted) {
    if (e.class_id >= kNumClasses) throw UsageError("emit_events_json: unknown class id " + std::to_string(e.class_id));
    if (e.start > e.end) throw UsageError("emit_events_json: event with start > end");
  }
  std::stable_sort(sorted.begin(), sorted.end(), [](const Event& a, const Event& b) {
    return a.class_id != b.class_id ? a.class_id < b.class_id : a.start < b.start;
  });
  std::string out = "{\"video_id\": " + nlohmann::json(video_id).dump() + ", \"events\": [";
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const auto& e = sorted[i];
    if (i > 0) out += ", ";
    out += "{\"label\": " + nlohmann::json(std::string(kLabelNames[e.class_id])).dump() +
           ", \"start_frame\": " + std::to_string(e.start) + ", \"end_frame\": " + std::to_string(e.end) +
           ", \"score\": " + format_fixed6(e.score) + "}";
  }
  out += "]}";
  return out;
}

VideoEvents parse_events_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("events json: ") + e.what());
  }
  VideoEvents v;
  try {
    if (!doc.is_object() || doc.size() != 2) throw FormatError("events json: expected keys video_id and events");
    v.video_id = doc.at("video_id").get<std::string>();
    for (const auto& item : doc.at("events")) {
      if (!item.is_object() || item.size() != 4) throw FormatError("events json: malformed event in " + v.video_id);
      const auto name = item.at("label").get<std::string>();
      const auto id = label_index(name);
      if (!id) throw FormatError("events json: unknown label '" + name + "'");
      Event e;
      e.class_id = *id;
      e.start = item.at("start_frame").get<std::size_t>();
      e.end = item.at("end_frame").get<std::size_t>();
      e.score = item.at("score").get<double>();
      if (e.start > e.end) throw FormatError("events json: start_frame > end_frame in " + v.video_id);
      v.events.push_back(e);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("events json: ") + e.what());
  }
  return v;
}

void write_events_file(const std::filesystem::path& path, const std::vector<VideoEvents>& videos) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const auto& v : videos) out << emit_events_json(v.video_id, v.events) << '\n';
}

std::vector<VideoEvents> read_events_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<VideoEvents> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(parse_events_json(line));
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_scores(const std::filesystem::path& path, const std::vector<ScoreMatrix>& videos) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "video_id,frame_index";
  for (auto name : kLabelNames) out << ',' << name;
  out << '\n';
  for (const auto& v : videos) {
    if (v.video_id.find(',') != std::string::npos) throw FormatError("video id contains a comma: " + v.video_id);
    for (std::size_t t = 0; t < v.frames(); ++t) {
      out << v.video_id << ',' << t;
      for (double p : v.probs[t]) out << ',' << format_exact(p);
      out << '\n';
    }
  }
}

std::vector<ScoreMatrix> read_scores(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  std::string header = "video_id,frame_index";
  for (auto name : kLabelNames) header += "," + std::string(name);
  if (!std::getline(in, line) || line != header) throw FormatError(path.string() + ": unexpected score header");
  std::vector<ScoreMatrix> videos;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    auto fields = split(line, ',');
    if (fields.size() != 2 + kNumClasses) throw FormatError(where + ": expected 19 fields");
    if (videos.empty() || videos.back().video_id != fields[0]) {
      for (const auto& v : videos)
        if (v.video_id == fields[0]) throw FormatError(where + ": frames of " + fields[0] + " are not contiguous");
      videos.push_back({fields[0], {}});
    }
    auto& v = videos.back();
    if (parse_index(fields[1], where) != v.frames()) {
      throw FormatError(where + ": expected frame index " + std::to_string(v.frames()));
    }
    ProbRow row;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      row[c] = parse_double(fields[2 + c], where);
      if (!(row[c] >= 0.0 && row[c] <= 1.0)) throw FormatError(where + ": probability outside [0, 1]");
    }
    v.probs.push_back(row);
  }
  return videos;
}

void write_thresholds(const std::filesystem::path& path, const Thresholds& thr) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", thr[c]);
    out << kLabelNames[c] << '\t' << buf << '\n';
  }
}

Thresholds read_thresholds(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  Thresholds thr{};
  std::array<bool, kNumClasses> seen{};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    auto fields = split(line, '\t');
    if (fields.size() != 2) throw FormatError(where + ": expected 'label<TAB>threshold'");
    auto id = label_index(fields[0]);
    if (!id) throw FormatError(where + ": unknown label '" + fields[0] + "'");
    if (seen[*id]) throw FormatError(where + ": duplicate label '" + fields[0] + "'");
    seen[*id] = true;
    thr[*id] = parse_double(fields[1], where);
  }
  for (std::size_t c = 0; c < kNumClasses; ++c)
    if (!seen[c]) throw FormatError(path.string() + ": missing threshold for " + std::string(kLabelNames[c]));
  validate_thresholds(thr);
  return thr;
}

}  // namespace vcediff
