#pragma once

#include <array>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "vcediff/image.hpp"
#include "vcediff/labels.hpp"

namespace vcediff {

using LabelVector = std::array<bool, kNumClasses>;

struct FrameRecord {
  std::string video_id;
  std::size_t frame_index = 0;
  LabelVector labels{};
  std::string image_path;  // optional
};

struct ClassFrequencyTable {
  std::array<std::size_t, kNumClasses> counts{};
  std::size_t total_frames = 0;
  std::size_t background_count = 0;
};

ClassFrequencyTable class_frequencies(const std::vector<FrameRecord>& records);

/// 1/sqrt(count of the rarest active label); background frames use
/// 1/sqrt(background_count).
std::vector<double> sampler_weights(const std::vector<FrameRecord>& records, const ClassFrequencyTable& freqs);

/// `count` i.i.d. indices drawn with replacement, P(i) = w_i / sum(w).
std::vector<std::size_t> weighted_sample(const std::vector<double>& weights, std::size_t count,
                                         std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentConfig {
  double crop_scale_min = 0.7;
  double crop_scale_max = 1.0;
  double hflip_p = 0.5;
  double vflip_p = 0.5;
  double rotation_deg = 15.0;
  double brightness = 0.2;  // factor uniform in [1 - b, 1 + b]
  double contrast = 0.2;
  double erase_p = 0.25;
  double erase_area_min = 0.02;
  double erase_area_max = 0.2;

  void validate() const;
};

/// Concrete parameters of one augmentation draw.
struct AugmentParams {
  double crop_scale = 1.0;  // side length fraction of the crop
  double crop_x = 0.0;      // top-left corner in pixels
  double crop_y = 0.0;
  bool hflip = false;
  bool vflip = false;
  double rotation_deg = 0.0;
  double brightness = 1.0;
  double contrast = 1.0;
  bool erase = false;
  std::size_t erase_x = 0, erase_y = 0, erase_w = 0, erase_h = 0;
};

AugmentParams draw_augment_params(std::size_t image_size, const AugmentConfig& config, std::mt19937_64& rng);

/// Crop+resize, flips, rotation, brightness/contrast, erasing, in that order.
Image apply_augment(const Image& image, const AugmentParams& params);

Image augment(const Image& image, std::mt19937_64& rng, const AugmentConfig& config);

// ---------------------------------------------------------------------------
// Targets

using TargetMatrix = std::vector<std::array<double, kNumClasses>>;

TargetMatrix targets_from_labels(const std::vector<LabelVector>& labels);

struct MixupResult {
  std::vector<Image> images;
  TargetMatrix targets;
  double lam = 1.0;
  std::vector<std::size_t> permutation;
};

/// One Beta(alpha, alpha) coefficient per batch; batches of one pass through
/// with lam = 1.
MixupResult mixup(const std::vector<Image>& images, const TargetMatrix& targets, double alpha,
                  std::mt19937_64& rng);
/// Mixing with a given coefficient and permutation.
MixupResult mixup_with(const std::vector<Image>& images, const TargetMatrix& targets, double lam,
                       const std::vector<std::size_t>& permutation);

double sample_beta(double alpha, double beta, std::mt19937_64& rng);

/// y (1 - eps) + (1 - y) eps.
TargetMatrix label_smooth(const TargetMatrix& targets, double eps);

// ---------------------------------------------------------------------------
// Synthetic dataset

struct SynthSpec {
  std::uint64_t seed = 42;
  std::size_t image_size = 32;
  std::size_t train_videos = 4;
  std::size_t val_videos = 2;
  std::size_t test_videos = 2;
  std::size_t frames_per_video = 500;
  double mean_event_length = 20.0;
  double noise = 0.35;
  double amplitude = 1.0;
  std::array<double, kNumClasses> prevalence{};

  void validate() const;
  static SynthSpec desk_default();
};

/// A generated frame keeps its pixels in memory; image_path stays empty.
struct SynthFrame {
  FrameRecord record;
  Image image;
};

struct SynthSplit {
  std::vector<SynthFrame> frames;
};

struct SynthDataset {
  SynthSpec spec;
  SynthSplit train, val, test;
};

/// Label runs per class are placed by splitting a video into a random
/// composition of gaps and events; each class adds its own spatial template
/// to Gaussian noise on the frames where it is active.
SynthDataset synth_dataset(const SynthSpec& spec);

/// Deterministic per-class template image.
Image class_template(std::size_t class_id, std::size_t image_size, std::uint64_t seed);

/// Regenerates the pixels of one frame from its record.
Image synth_frame_image(const SynthSpec& spec, const FrameRecord& record);

std::vector<FrameRecord> records_of(const SynthSplit& split);

// ---------------------------------------------------------------------------
// Manifests: "video_id,frame_index,labels,image_path" with ';'-joined labels.

void write_manifest(const std::filesystem::path& path, const std::vector<FrameRecord>& records);
std::vector<FrameRecord> read_manifest(const std::filesystem::path& path);

std::string labels_to_string(const LabelVector& labels);
LabelVector labels_from_string(const std::string& text);

/// Binary PPM (P6, maxval 255) to a [0, 1] image and back (values clamped).
Image read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& image);

}  // namespace vcediff
