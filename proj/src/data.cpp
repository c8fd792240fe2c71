#include "vcediff/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "vcediff/checkpoint.hpp"
#include "vcediff/errors.hpp"
#include "vcediff/rng.hpp"

namespace vcediff {

namespace {

std::uint64_t hash_string(const std::string& s) {
  return fnv1a64(std::span(reinterpret_cast<const unsigned char*>(s.data()), s.size()));
}

double bilinear_zero(const Image& img, std::size_t c, double sy, double sx) {
  const double fy = std::floor(sy), fx = std::floor(sx);
  const double ty = sy - fy, tx = sx - fx;
  const long y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
  const long h = static_cast<long>(img.height), w = static_cast<long>(img.width);
  auto px = [&](long y, long x) {
    return (y < 0 || y >= h || x < 0 || x >= w) ? 0.0
                                                : img.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
  };
  // Skip zero-weight taps so that exact grid positions reproduce the input.
  double v = 0.0;
  if (ty < 1.0 && tx < 1.0) v += (1 - ty) * (1 - tx) * px(y0, x0);
  if (ty > 0.0 && tx < 1.0) v += ty * (1 - tx) * px(y0 + 1, x0);
  if (ty < 1.0 && tx > 0.0) v += (1 - ty) * tx * px(y0, x0 + 1);
  if (ty > 0.0 && tx > 0.0) v += ty * tx * px(y0 + 1, x0 + 1);
  return v;
}

double bilinear_clamped(const Image& img, std::size_t c, double sy, double sx) {
  sy = std::clamp(sy, 0.0, static_cast<double>(img.height - 1));
  sx = std::clamp(sx, 0.0, static_cast<double>(img.width - 1));
  return bilinear_zero(img, c, sy, sx);
}

// k positive parts summing to total, uniformly over compositions.
std::vector<std::size_t> random_composition(std::size_t total, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::size_t> cuts(total - 1);
  std::iota(cuts.begin(), cuts.end(), 1);
  std::shuffle(cuts.begin(), cuts.end(), rng);
  cuts.resize(k - 1);
  std::sort(cuts.begin(), cuts.end());
  std::vector<std::size_t> parts;
  std::size_t prev = 0;
  for (std::size_t c : cuts) {
    parts.push_back(c - prev);
    prev = c;
  }
  parts.push_back(total - prev);
  return parts;
}

// k + 1 non-negative parts summing to total (stars and bars).
std::vector<std::size_t> random_weak_composition(std::size_t total, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::size_t> parts = random_composition(total + k + 1, k + 1, rng);
  for (auto& p : parts) --p;
  return parts;
}

const char* kSplitNames[] = {"train", "val", "test"};

}  // namespace

// ---------------------------------------------------------------------------
// Frequencies and sampling

ClassFrequencyTable class_frequencies(const std::vector<FrameRecord>& records) {
  if (records.empty()) throw UsageError("class_frequencies: no records");
  ClassFrequencyTable t;
  t.total_frames = records.size();
  for (const auto& r : records) {
    bool any = false;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      if (r.labels[c]) {
        ++t.counts[c];
        any = true;
      }
    }
    if (!any) ++t.background_count;
  }
  return t;
}

std::vector<double> sampler_weights(const std::vector<FrameRecord>& records, const ClassFrequencyTable& freqs) {
  std::vector<double> w(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    std::size_t rarest = 0;
    bool any = false;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      if (!records[i].labels[c]) continue;
      if (freqs.counts[c] == 0) {
        throw std::logic_error("sampler_weights: frame carries label " + std::string(kLabelNames[c]) +
                               " whose frequency is zero");
      }
      rarest = any ? std::min(rarest, freqs.counts[c]) : freqs.counts[c];
      any = true;
    }
    if (!any) {
      if (freqs.background_count == 0) {
        throw std::logic_error("sampler_weights: background frame present but background_count is zero");
      }
      rarest = freqs.background_count;
    }
    w[i] = 1.0 / std::sqrt(static_cast<double>(rarest));
  }
  return w;
}

std::vector<std::size_t> weighted_sample(const std::vector<double>& weights, std::size_t count,
                                         std::mt19937_64& rng) {
  if (count == 0) throw UsageError("weighted_sample: count must be at least 1");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw UsageError("weighted_sample: weights must be finite and >= 0");
    total += w;
  }
  if (!(total > 0.0)) throw UsageError("weighted_sample: all weights are zero");
  std::discrete_distribution<std::size_t> dist(weights.begin(), weights.end());
  std::vector<std::size_t> out(count);
  for (auto& i : out) i = dist(rng);
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation

void AugmentConfig::validate() const {
  if (!(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0)) {
    throw ConfigError("augment: crop scale range must satisfy 0 < min <= max <= 1");
  }
  for (double p : {hflip_p, vflip_p, erase_p}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("augment: probabilities must be in [0, 1]");
  }
  if (!(rotation_deg >= 0.0 && rotation_deg <= 180.0)) throw ConfigError("augment: rotation must be in [0, 180]");
  if (!(brightness >= 0.0 && brightness < 1.0) || !(contrast >= 0.0 && contrast < 1.0)) {
    throw ConfigError("augment: jitter strengths must be in [0, 1)");
  }
  if (!(erase_area_min > 0.0 && erase_area_min <= erase_area_max && erase_area_max <= 1.0)) {
    throw ConfigError("augment: erase area range must satisfy 0 < min <= max <= 1");
  }
}

AugmentParams draw_augment_params(std::size_t size, const AugmentConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  AugmentParams p;
  // Every draw happens unconditionally so the stream position does not
  // depend on earlier outcomes.
  const double area = cfg.crop_scale_min + (cfg.crop_scale_max - cfg.crop_scale_min) * u01(rng);
  p.crop_scale = std::sqrt(area);
  const double room = static_cast<double>(size) * (1.0 - p.crop_scale);
  p.crop_x = room * u01(rng);
  p.crop_y = room * u01(rng);
  p.hflip = u01(rng) < cfg.hflip_p;
  p.vflip = u01(rng) < cfg.vflip_p;
  p.rotation_deg = cfg.rotation_deg * (2.0 * u01(rng) - 1.0);
  p.brightness = 1.0 + cfg.brightness * (2.0 * u01(rng) - 1.0);
  p.contrast = 1.0 + cfg.contrast * (2.0 * u01(rng) - 1.0);
  p.erase = u01(rng) < cfg.erase_p;
  const double erase_area = cfg.erase_area_min + (cfg.erase_area_max - cfg.erase_area_min) * u01(rng);
  const auto side = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(std::sqrt(erase_area) * static_cast<double>(size))), 1, size);
  p.erase_w = p.erase_h = side;
  p.erase_x = static_cast<std::size_t>(u01(rng) * static_cast<double>(size - side + 1));
  p.erase_y = static_cast<std::size_t>(u01(rng) * static_cast<double>(size - side + 1));
  p.erase_x = std::min(p.erase_x, size - side);
  p.erase_y = std::min(p.erase_y, size - side);
  return p;
}

Image apply_augment(const Image& in, const AugmentParams& p) {
  const std::size_t h = in.height, w = in.width;
  Image out(in.channels, h, w);

  // Resized crop: output pixel centers map onto the crop window.
  for (std::size_t c = 0; c < in.channels; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double src_y = p.crop_y + (static_cast<double>(y) + 0.5) * p.crop_scale - 0.5;
        const double src_x = p.crop_x + (static_cast<double>(x) + 0.5) * p.crop_scale - 0.5;
        out.at(c, y, x) = bilinear_clamped(in, c, src_y, src_x);
      }
    }
  }

  if (p.hflip || p.vflip) {
    Image flipped(out.channels, h, w);
    for (std::size_t c = 0; c < out.channels; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          flipped.at(c, y, x) = out.at(c, p.vflip ? h - 1 - y : y, p.hflip ? w - 1 - x : x);
        }
    out = std::move(flipped);
  }

  if (p.rotation_deg != 0.0) {
    const double theta = p.rotation_deg * M_PI / 180.0;
    const double cs = std::cos(theta), sn = std::sin(theta);
    const double cy = (static_cast<double>(h) - 1.0) / 2.0, cx = (static_cast<double>(w) - 1.0) / 2.0;
    Image rotated(out.channels, h, w);
    for (std::size_t c = 0; c < out.channels; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          // Inverse map: rotate the output position back by -theta.
          const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
          const double src_x = cs * dx + sn * dy + cx;
          const double src_y = -sn * dx + cs * dy + cy;
          rotated.at(c, y, x) = bilinear_zero(out, c, src_y, src_x);
        }
    out = std::move(rotated);
  }

  if (p.brightness != 1.0) {
    for (double& v : out.pixels) v *= p.brightness;
  }
  if (p.contrast != 1.0) {
    const double mean = std::accumulate(out.pixels.begin(), out.pixels.end(), 0.0) /
                        static_cast<double>(out.pixels.size());
    for (double& v : out.pixels) v = (v - mean) * p.contrast + mean;
  }

  if (p.erase) {
    for (std::size_t c = 0; c < out.channels; ++c)
      for (std::size_t y = p.erase_y; y < std::min(h, p.erase_y + p.erase_h); ++y)
        for (std::size_t x = p.erase_x; x < std::min(w, p.erase_x + p.erase_w); ++x) out.at(c, y, x) = 0.0;
  }
  return out;
}

Image augment(const Image& image, std::mt19937_64& rng, const AugmentConfig& config) {
  if (image.height != image.width) throw ShapeError("augment: image must be square");
  return apply_augment(image, draw_augment_params(image.height, config, rng));
}

// ---------------------------------------------------------------------------
// Targets

TargetMatrix targets_from_labels(const std::vector<LabelVector>& labels) {
  TargetMatrix t(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t c = 0; c < kNumClasses; ++c) t[i][c] = labels[i][c] ? 1.0 : 0.0;
  return t;
}

double sample_beta(double a, double b, std::mt19937_64& rng) {
  if (!(a > 0.0 && b > 0.0)) throw ConfigError("beta distribution parameters must be positive");
  std::gamma_distribution<double> ga(a, 1.0), gb(b, 1.0);
  const double x = ga(rng), y = gb(rng);
  if (x + y == 0.0) return 0.5;
  return x / (x + y);
}

MixupResult mixup_with(const std::vector<Image>& images, const TargetMatrix& targets, double lam,
                       const std::vector<std::size_t>& perm) {
  if (images.size() != targets.size() || perm.size() != images.size()) {
    throw ShapeError("mixup: images, targets and permutation must have equal length");
  }
  if (!(lam >= 0.0 && lam <= 1.0)) throw DomainError("mixup: lam must be in [0, 1]");
  MixupResult r;
  r.lam = lam;
  r.permutation = perm;
  r.images.reserve(images.size());
  r.targets.resize(targets.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& a = images[i];
    const Image& b = images[perm[i]];
    if (a.pixels.size() != b.pixels.size()) throw ShapeError("mixup: image sizes differ");
    Image m = a;
    if (lam != 1.0) {
      for (std::size_t k = 0; k < m.pixels.size(); ++k) m.pixels[k] = lam * a.pixels[k] + (1.0 - lam) * b.pixels[k];
    }
    r.images.push_back(std::move(m));
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      r.targets[i][c] = lam == 1.0 ? targets[i][c] : lam * targets[i][c] + (1.0 - lam) * targets[perm[i]][c];
    }
  }
  return r;
}

MixupResult mixup(const std::vector<Image>& images, const TargetMatrix& targets, double alpha,
                  std::mt19937_64& rng) {
  if (!(alpha > 0.0)) throw ConfigError("mixup: alpha must be positive");
  std::vector<std::size_t> perm(images.size());
  std::iota(perm.begin(), perm.end(), 0);
  if (images.size() < 2) return mixup_with(images, targets, 1.0, perm);
  const double lam = sample_beta(alpha, alpha, rng);
  std::shuffle(perm.begin(), perm.end(), rng);
  return mixup_with(images, targets, lam, perm);
}

TargetMatrix label_smooth(const TargetMatrix& targets, double eps) {
  if (!(eps >= 0.0 && eps < 0.5)) throw ConfigError("label_smooth: eps must be in [0, 0.5)");
  TargetMatrix out = targets;
  if (eps == 0.0) return out;
  for (auto& row : out)
    for (double& y : row) y = y * (1.0 - eps) + (1.0 - y) * eps;
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic dataset

void SynthSpec::validate() const {
  if (image_size == 0) throw ConfigError("synth: image_size must be positive");
  if (frames_per_video == 0) throw ConfigError("synth: frames_per_video must be positive");
  if (train_videos + val_videos + test_videos == 0) throw ConfigError("synth: no videos requested");
  if (!(mean_event_length >= 1.0)) throw ConfigError("synth: mean_event_length must be >= 1");
  if (!(noise >= 0.0) || !std::isfinite(amplitude)) throw ConfigError("synth: noise/amplitude invalid");
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (!(prevalence[c] >= 0.0 && prevalence[c] <= 1.0)) {
      throw ConfigError("synth: prevalence of " + std::string(kLabelNames[c]) + " must be in [0, 1]");
    }
  }
}

SynthSpec SynthSpec::desk_default() {
  SynthSpec s;
  s.prevalence = {0.02,  0.03, 0.25, 0.35, 0.2,  0.003, 0.005, 0.005, 0.005,
                  0.02,  0.02, 0.03, 0.02, 0.01, 0.02,  0.01,  0.015};
  return s;
}

Image class_template(std::size_t class_id, std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(derive_seed(seed, "template"), {class_id}));
  std::uniform_real_distribution<double> pos(0.15, 0.85), radius(0.08, 0.2), sign(-1.0, 1.0);
  Image img(3, size, size);
  const double s = static_cast<double>(size);
  for (int blob = 0; blob < 3; ++blob) {
    const double cy = pos(rng) * s, cx = pos(rng) * s, r = radius(rng) * s;
    const double color[3] = {sign(rng), sign(rng), sign(rng)};
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
          const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
          img.at(c, y, x) += color[c] * std::exp(-(dy * dy + dx * dx) / (2 * r * r));
        }
  }
  double ss = 0.0;
  for (double v : img.pixels) ss += v * v;
  const double rms = std::sqrt(ss / static_cast<double>(img.pixels.size()));
  for (double& v : img.pixels) v /= rms;
  return img;
}

namespace {

Image render_frame(const SynthSpec& spec, const FrameRecord& record, const std::vector<Image>& templates) {
  std::mt19937_64 rng(
      derive_seed(derive_seed(spec.seed, "frame"), {hash_string(record.video_id), record.frame_index}));
  std::normal_distribution<double> normal(0.0, 1.0);
  Image img(3, spec.image_size, spec.image_size);
  for (double& v : img.pixels) v = spec.noise * normal(rng);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (!record.labels[c]) continue;
    for (std::size_t k = 0; k < img.pixels.size(); ++k) img.pixels[k] += spec.amplitude * templates[c].pixels[k];
  }
  return img;
}

std::vector<Image> all_templates(const SynthSpec& spec) {
  std::vector<Image> t;
  for (std::size_t c = 0; c < kNumClasses; ++c) t.push_back(class_template(c, spec.image_size, spec.seed));
  return t;
}

}  // namespace

Image synth_frame_image(const SynthSpec& spec, const FrameRecord& record) {
  return render_frame(spec, record, all_templates(spec));
}

SynthDataset synth_dataset(const SynthSpec& spec) {
  spec.validate();
  SynthDataset ds;
  ds.spec = spec;
  const std::size_t counts[3] = {spec.train_videos, spec.val_videos, spec.test_videos};
  SynthSplit* splits[3] = {&ds.train, &ds.val, &ds.test};
  const std::size_t f = spec.frames_per_video;

  const std::vector<Image> templates = all_templates(spec);

  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t videos = counts[s];
    if (videos == 0) continue;
    std::vector<std::vector<LabelVector>> labels(videos, std::vector<LabelVector>(f, LabelVector{}));
    std::mt19937_64 rng(derive_seed(derive_seed(spec.seed, "events"), {s}));
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      const double expected = spec.prevalence[c] * static_cast<double>(videos * f);
      const auto total = static_cast<std::size_t>(std::llround(expected));
      if (total == 0) continue;
      const std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(
                                                         static_cast<double>(total) / spec.mean_event_length)));
      std::vector<std::size_t> lengths = random_composition(total, std::min(k, total), rng);
      std::vector<std::vector<std::size_t>> per_video(videos);
      std::uniform_int_distribution<std::size_t> pick(0, videos - 1);
      for (std::size_t len : lengths) per_video[pick(rng)].push_back(len);
      for (std::size_t v = 0; v < videos; ++v) {
        const auto& evs = per_video[v];
        if (evs.empty()) continue;
        const std::size_t used = std::accumulate(evs.begin(), evs.end(), std::size_t{0});
        if (used + evs.size() - 1 > f) {
          throw ConfigError("synth: prevalence of " + std::string(kLabelNames[c]) +
                            " does not fit into the videos (event frames exceed video length)");
        }
        const std::size_t free = f - used - (evs.size() - 1);
        std::vector<std::size_t> gaps = random_weak_composition(free, evs.size(), rng);
        std::size_t t = gaps[0];
        for (std::size_t e = 0; e < evs.size(); ++e) {
          for (std::size_t i = 0; i < evs[e]; ++i) labels[v][t + i][c] = true;
          t += evs[e] + 1 + gaps[e + 1];
        }
      }
    }
    for (std::size_t v = 0; v < videos; ++v) {
      char id[32];
      std::snprintf(id, sizeof id, "%s_%03zu", kSplitNames[s], v);
      for (std::size_t i = 0; i < f; ++i) {
        SynthFrame frame;
        frame.record.video_id = id;
        frame.record.frame_index = i;
        frame.record.labels = labels[v][i];
        frame.image = render_frame(spec, frame.record, templates);
        splits[s]->frames.push_back(std::move(frame));
      }
    }
  }
  return ds;
}

std::vector<FrameRecord> records_of(const SynthSplit& split) {
  std::vector<FrameRecord> out;
  out.reserve(split.frames.size());
  for (const auto& f : split.frames) out.push_back(f.record);
  return out;
}

// ---------------------------------------------------------------------------
// Manifests

std::string labels_to_string(const LabelVector& labels) {
  std::string s;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (!labels[c]) continue;
    if (!s.empty()) s += ';';
    s += kLabelNames[c];
  }
  return s;
}

LabelVector labels_from_string(const std::string& text) {
  LabelVector v{};
  if (text.empty()) return v;
  std::stringstream ss(text);
  std::string name;
  while (std::getline(ss, name, ';')) {
    auto idx = label_index(name);
    if (!idx) throw FormatError("unknown label '" + name + "'");
    v[*idx] = true;
  }
  return v;
}

void write_manifest(const std::filesystem::path& path, const std::vector<FrameRecord>& records) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write manifest " + path.string());
  out << "video_id,frame_index,labels,image_path\n";
  for (const auto& r : records) {
    if (r.video_id.find(',') != std::string::npos || r.image_path.find(',') != std::string::npos) {
      throw FormatError("manifest fields must not contain commas: " + r.video_id);
    }
    out << r.video_id << ',' << r.frame_index << ',' << labels_to_string(r.labels) << ',' << r.image_path << '\n';
  }
}

std::vector<FrameRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "video_id,frame_index,labels,image_path") {
    throw FormatError(path.string() + ": unexpected manifest header");
  }
  std::vector<FrameRecord> records;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    if (fields.size() != 4) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 4 fields");
    }
    FrameRecord r;
    r.video_id = fields[0];
    try {
      std::size_t used = 0;
      const long long idx = std::stoll(fields[1], &used);
      if (used != fields[1].size() || idx < 0) throw std::invalid_argument(fields[1]);
      r.frame_index = static_cast<std::size_t>(idx);
      r.labels = labels_from_string(fields[2]);
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const std::exception&) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad frame index '" + fields[1] + "'");
    }
    r.image_path = fields[3];
    records.push_back(std::move(r));
  }
  return records;
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open image " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (!in || magic != "P6" || maxval != 255 || w == 0 || h == 0) {
    throw FormatError(path.string() + ": expected a binary PPM (P6) with maxval 255");
  }
  in.get();
  std::vector<unsigned char> bytes(3 * w * h);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw FormatError(path.string() + ": truncated pixel data");
  Image img(3, h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = bytes[(y * w + x) * 3 + c] / 255.0;
  return img;
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 3) throw ShapeError("write_ppm: expected 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(image.at(c, y, x), 0.0, 1.0);
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
      }
}

}  // namespace vcediff
