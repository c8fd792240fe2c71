#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "test_util.hpp"
#include "vcediff/data.hpp"
#include "vcediff/errors.hpp"

using namespace vcediff;

namespace {

FrameRecord frame(std::initializer_list<std::size_t> classes, std::size_t index = 0) {
  FrameRecord r;
  r.video_id = "v";
  r.frame_index = index;
  for (std::size_t c : classes) r.labels[c] = true;
  return r;
}

AugmentParams identity_params() {
  AugmentParams p;
  return p;
}

Image random_image(std::size_t size, std::mt19937_64& rng) {
  Image img(3, size, size);
  img.pixels = vcediff::testing::random_values(img.pixels.size(), rng);
  return img;
}

SynthSpec small_spec() {
  SynthSpec s = SynthSpec::desk_default();
  s.image_size = 8;
  s.train_videos = 2;
  s.val_videos = 1;
  s.test_videos = 1;
  s.frames_per_video = 250;
  return s;
}

}  // namespace

TEST_CASE("class frequencies") {
  auto t = class_frequencies({frame({0}), frame({0, 1}), frame({})});
  CHECK(t.counts[0] == 2);
  CHECK(t.counts[1] == 1);
  CHECK(t.background_count == 1);
  CHECK(t.total_frames == 3);

  auto bg = class_frequencies({frame({}), frame({})});
  for (auto c : bg.counts) CHECK(c == 0);
  CHECK(bg.background_count == 2);

  CHECK_THROWS_AS(class_frequencies({}), UsageError);

  SUBCASE("synthetic frames against a recount") {
    SynthSpec s = small_spec();
    s.frames_per_video = 250;
    s.train_videos = 4;
    auto records = records_of(synth_dataset(s).train);
    REQUIRE(records.size() == 1000);
    auto t2 = class_frequencies(records);
    std::map<std::size_t, std::size_t> recount;
    std::size_t background = 0;
    for (const auto& r : records) {
      bool any = false;
      for (std::size_t c = 0; c < kNumClasses; ++c)
        if (r.labels[c]) ++recount[c], any = true;
      if (!any) ++background;
    }
    for (std::size_t c = 0; c < kNumClasses; ++c) CHECK(t2.counts[c] == recount[c]);
    CHECK(t2.background_count == background);
    std::size_t labelled = 0;
    for (const auto& r : records) labelled += labels_to_string(r.labels).empty() ? 0 : 1;
    CHECK(t2.background_count + labelled == t2.total_frames);
  }
}

TEST_CASE("sampler weights") {
  std::vector<FrameRecord> records = {frame({2}), frame({2}), frame({2}), frame({2}), frame({2, 3}), frame({})};
  auto t = class_frequencies(records);
  auto w = sampler_weights(records, t);
  CHECK(w[0] == doctest::Approx(1 / std::sqrt(5.0)).epsilon(1e-15));
  CHECK(w[4] == 1.0);
  CHECK(w[5] == 1.0);
  CHECK(w[1] == w[2]);

  SUBCASE("rarest label of four") {
    std::vector<FrameRecord> r4 = {frame({1}), frame({1}), frame({1}), frame({1}), frame({0})};
    auto w4 = sampler_weights(r4, class_frequencies(r4));
    CHECK(w4[0] == 0.5);
  }

  SUBCASE("inconsistent tables are rejected") {
    ClassFrequencyTable bad;
    bad.total_frames = 1;
    CHECK_THROWS_AS(sampler_weights({frame({})}, bad), std::logic_error);
    CHECK_THROWS_AS(sampler_weights({frame({3})}, bad), std::logic_error);
  }

  SUBCASE("monotone in the rarest class count") {
    std::mt19937_64 rng(8);
    auto records2 = records_of(synth_dataset(small_spec()).train);
    auto t2 = class_frequencies(records2);
    auto w2 = sampler_weights(records2, t2);
    auto rarest = [&](const FrameRecord& r) {
      std::size_t m = SIZE_MAX;
      for (std::size_t c = 0; c < kNumClasses; ++c)
        if (r.labels[c]) m = std::min(m, t2.counts[c]);
      return m == SIZE_MAX ? t2.background_count : m;
    };
    std::uniform_int_distribution<std::size_t> pick(0, records2.size() - 1);
    for (int trial = 0; trial < 2000; ++trial) {
      const std::size_t a = pick(rng), b = pick(rng);
      if (rarest(records2[a]) < rarest(records2[b])) CHECK(w2[a] > w2[b]);
    }
    for (double v : w2) CHECK((std::isfinite(v) && v > 0));
  }
}

TEST_CASE("weighted draws follow the weights") {
  SynthSpec s = small_spec();
  s.frames_per_video = 250;
  s.train_videos = 2;
  auto records = records_of(synth_dataset(s).train);
  REQUIRE(records.size() == 500);
  auto w = sampler_weights(records, class_frequencies(records));
  double total = 0;
  for (double v : w) total += v;

  std::mt19937_64 rng(42);
  const std::size_t draws = 1000000;
  std::vector<std::size_t> counts(records.size(), 0);
  for (std::size_t i : weighted_sample(w, draws, rng)) ++counts[i];
  std::size_t outside3 = 0;
  double worst = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const double p = w[i] / total;
    const double se = std::sqrt(p * (1 - p) / draws);
    const double z = std::abs(static_cast<double>(counts[i]) / draws - p) / se;
    worst = std::max(worst, z);
    if (z > 3) ++outside3;
  }
  // At 3 SE about 0.27% of 500 independent frames are expected outside.
  INFO("frames beyond 3 SE: " << outside3 << ", worst z " << worst);
  CHECK(outside3 <= 5);
  CHECK(worst < 5.0);
}

TEST_CASE("weighted_sample") {
  std::mt19937_64 rng(1);
  for (std::size_t i : weighted_sample({0, 0, 3.5, 0}, 1000, rng)) CHECK(i == 2);

  SUBCASE("uniform weights pass a chi-square test") {
    std::mt19937_64 r(42);
    const std::size_t k = 10, n = 100000;
    std::vector<double> counts(k, 0);
    for (std::size_t i : weighted_sample(std::vector<double>(k, 1.0), n, r)) counts[i] += 1;
    double chi2 = 0;
    for (double c : counts) chi2 += (c - n / k) * (c - n / k) / (n / static_cast<double>(k));
    CHECK(chi2 < 27.877);  // df 9, alpha 0.001
  }

  SUBCASE("same seed, same sequence") {
    std::mt19937_64 a(42), b(42);
    std::vector<double> w = {1, 2, 3, 4};
    CHECK(weighted_sample(w, 100, a) == weighted_sample(w, 100, b));
  }

  CHECK_THROWS_AS(weighted_sample({1.0}, 0, rng), UsageError);
  CHECK_THROWS_AS(weighted_sample({0.0, 0.0}, 1, rng), UsageError);
}

TEST_CASE("augmentation") {
  std::mt19937_64 rng(3);
  Image img = random_image(8, rng);

  SUBCASE("identity parameters") {
    Image out = apply_augment(img, identity_params());
    for (std::size_t i = 0; i < img.pixels.size(); ++i) CHECK(std::abs(out.pixels[i] - img.pixels[i]) < 1e-10);
  }

  SUBCASE("horizontal flip is an involution") {
    AugmentParams p = identity_params();
    p.hflip = true;
    Image once = apply_augment(img, p);
    CHECK(once.at(1, 2, 0) == img.at(1, 2, 7));
    Image twice = apply_augment(once, p);
    CHECK(twice.pixels == img.pixels);
  }

  SUBCASE("vertical flip") {
    AugmentParams p = identity_params();
    p.vflip = true;
    Image once = apply_augment(img, p);
    CHECK(once.at(0, 0, 3) == img.at(0, 7, 3));
  }

  SUBCASE("quarter turn equals an index permutation") {
    Image small = random_image(4, rng);
    AugmentParams p = identity_params();
    p.rotation_deg = 90.0;
    Image out = apply_augment(small, p);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x) CHECK(std::abs(out.at(c, y, x) - small.at(c, 3 - x, y)) < 1e-10);
  }

  SUBCASE("brightness and contrast") {
    AugmentParams p = identity_params();
    p.brightness = 1.1;
    Image out = apply_augment(img, p);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) CHECK(out.pixels[i] == doctest::Approx(1.1 * img.pixels[i]));
    p = identity_params();
    p.contrast = 0.0;
    Image flat = apply_augment(img, p);
    double mean = 0;
    for (double v : img.pixels) mean += v / img.pixels.size();
    for (double v : flat.pixels) CHECK(v == doctest::Approx(mean));
  }

  SUBCASE("erasing zeroes a rectangle") {
    AugmentParams p = identity_params();
    p.erase = true;
    p.erase_x = 2;
    p.erase_y = 3;
    p.erase_w = p.erase_h = 2;
    Image out = apply_augment(img, p);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x) {
          const bool inside = y >= 3 && y < 5 && x >= 2 && x < 4;
          CHECK(out.at(c, y, x) == (inside ? 0.0 : img.at(c, y, x)));
        }
  }

  SUBCASE("draws stay in their documented ranges and are reproducible") {
    AugmentConfig cfg;
    std::mt19937_64 a(11), b(11);
    for (int i = 0; i < 500; ++i) {
      AugmentParams p = draw_augment_params(32, cfg, a);
      CHECK(p.crop_scale * p.crop_scale >= 0.7 - 1e-12);
      CHECK(p.crop_scale <= 1.0);
      CHECK(p.crop_x + p.crop_scale * 32 <= 32 + 1e-9);
      CHECK(std::abs(p.rotation_deg) <= 15.0);
      CHECK((p.brightness >= 0.8 && p.brightness <= 1.2));
      CHECK((p.contrast >= 0.8 && p.contrast <= 1.2));
      CHECK(p.erase_x + p.erase_w <= 32);
      Image x = augment(img, b, cfg);
      (void)x;
    }
    std::mt19937_64 c(5), d(5);
    CHECK(augment(img, c, cfg).pixels == augment(img, d, cfg).pixels);
  }
}

TEST_CASE("mixup") {
  std::mt19937_64 rng(4);
  std::vector<Image> imgs = {Image(3, 2, 2, 0.0), Image(3, 2, 2, 2.0)};
  TargetMatrix t(2);
  t[0].fill(0.0);
  t[1].fill(0.0);
  t[0][0] = 1.0;
  t[1][1] = 1.0;

  SUBCASE("lam 1 is the identity") {
    MixupResult r = mixup_with(imgs, t, 1.0, {1, 0});
    CHECK(r.images[0].pixels == imgs[0].pixels);
    CHECK(r.targets == t);
  }

  SUBCASE("midpoint") {
    MixupResult r = mixup_with(imgs, t, 0.5, {1, 0});
    for (double v : r.images[0].pixels) CHECK(v == 1.0);
    CHECK(r.targets[0][0] == 0.5);
    CHECK(r.targets[0][1] == 0.5);
    CHECK(r.targets[0][2] == 0.0);
  }

  SUBCASE("single-image batch passes through") {
    MixupResult r = mixup({imgs[0]}, {t[0]}, 0.3, rng);
    CHECK(r.lam == 1.0);
    CHECK(r.images[0].pixels == imgs[0].pixels);
  }

  SUBCASE("targets stay in [0,1] and pixels in the input hull") {
    std::vector<Image> batch;
    TargetMatrix targets;
    for (int i = 0; i < 8; ++i) {
      batch.push_back(random_image(4, rng));
      std::array<double, kNumClasses> y{};
      for (double& v : y) v = rng() % 2;
      targets.push_back(y);
    }
    double lo = INFINITY, hi = -INFINITY;
    for (auto& b : batch)
      for (double v : b.pixels) lo = std::min(lo, v), hi = std::max(hi, v);
    for (int trial = 0; trial < 50; ++trial) {
      MixupResult r = mixup(batch, targets, 0.3, rng);
      CHECK((r.lam >= 0.0 && r.lam <= 1.0));
      for (auto& row : r.targets)
        for (double v : row) CHECK((v >= 0.0 && v <= 1.0));
      for (auto& b : r.images)
        for (double v : b.pixels) CHECK((v >= lo - 1e-12 && v <= hi + 1e-12));
    }
  }

  SUBCASE("beta samples have the right mean and variance") {
    const double a = 0.3;
    double m = 0, m2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
      const double x = sample_beta(a, a, rng);
      m += x / n;
      m2 += x * x / n;
    }
    CHECK(m == doctest::Approx(0.5).epsilon(0.01));
    CHECK(m2 - m * m == doctest::Approx(1.0 / (4 * (2 * a + 1))).epsilon(0.02));
  }
}

TEST_CASE("label smoothing") {
  TargetMatrix t(1);
  t[0].fill(0.0);
  t[0][3] = 1.0;
  t[0][4] = 0.5;
  TargetMatrix s = label_smooth(t, 0.05);
  CHECK(s[0][0] == doctest::Approx(0.05).epsilon(1e-15));
  CHECK(s[0][3] == doctest::Approx(0.95).epsilon(1e-15));
  CHECK(s[0][4] == 0.5);
  CHECK(label_smooth(t, 0.0) == t);
  CHECK_THROWS_AS(label_smooth(t, 0.5), ConfigError);
  CHECK_THROWS_AS(label_smooth(t, -0.1), ConfigError);

  SUBCASE("smoothing commutes with mixing") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<Image> imgs(4, Image(3, 1, 1));
      TargetMatrix y(4);
      for (auto& row : y)
        for (double& v : row) v = rng() % 2;
      const double lam = std::uniform_real_distribution<double>(0, 1)(rng);
      std::vector<std::size_t> perm = {2, 0, 3, 1};
      auto a = label_smooth(mixup_with(imgs, y, lam, perm).targets, 0.05);
      auto b = mixup_with(imgs, label_smooth(y, 0.05), lam, perm).targets;
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t c = 0; c < kNumClasses; ++c) CHECK(std::abs(a[i][c] - b[i][c]) < 1e-12);
    }
  }
}

TEST_CASE("synthetic dataset") {
  SynthSpec s = small_spec();
  s.prevalence[9] = 0.0;
  SynthDataset a = synth_dataset(s);
  SynthDataset b = synth_dataset(s);
  CHECK(a.train.frames.size() == 500);
  CHECK(a.val.frames.size() == 250);
  for (std::size_t i = 0; i < a.train.frames.size(); ++i) {
    CHECK(a.train.frames[i].record.labels == b.train.frames[i].record.labels);
    CHECK(a.train.frames[i].image.pixels == b.train.frames[i].image.pixels);
    CHECK_FALSE(a.train.frames[i].record.labels[9]);
  }

  SUBCASE("frames regenerate from their records") {
    const auto& f = a.val.frames[17];
    CHECK(synth_frame_image(s, f.record).pixels == f.image.pixels);
  }

  SUBCASE("realized prevalence over 20k frames") {
    SynthSpec big = SynthSpec::desk_default();
    big.image_size = 4;
    big.train_videos = 40;
    big.val_videos = big.test_videos = 0;
    big.frames_per_video = 500;
    auto t = class_frequencies(records_of(synth_dataset(big).train));
    REQUIRE(t.total_frames == 20000);
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      const double realized = static_cast<double>(t.counts[c]) / 20000.0;
      CHECK(std::abs(realized - big.prevalence[c]) <= 0.2 * big.prevalence[c]);
    }
  }

  SUBCASE("labels form runs inside each video") {
    std::set<std::pair<std::string, std::size_t>> seen;
    for (const auto& f : a.train.frames) CHECK(seen.insert({f.record.video_id, f.record.frame_index}).second);
  }

  SUBCASE("infeasible prevalence") {
    SynthSpec bad = small_spec();
    bad.prevalence[0] = 1.5;
    CHECK_THROWS_AS(synth_dataset(bad), ConfigError);
    bad = small_spec();
    bad.mean_event_length = 1.0;
    bad.prevalence[0] = 0.99;
    CHECK_THROWS_AS(synth_dataset(bad), ConfigError);
  }
}

TEST_CASE("manifest round trip") {
  SynthDataset ds = synth_dataset(small_spec());
  auto records = records_of(ds.val);
  records[3].image_path = "frames/x.bin";
  auto path = std::filesystem::temp_directory_path() / "vcediff_test_manifest.csv";
  write_manifest(path, records);
  auto back = read_manifest(path);
  REQUIRE(back.size() == records.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].video_id == records[i].video_id);
    CHECK(back[i].frame_index == records[i].frame_index);
    CHECK(back[i].labels == records[i].labels);
    CHECK(back[i].image_path == records[i].image_path);
  }
  std::filesystem::remove(path);

  CHECK(labels_from_string("colon;polyp")[4]);
  CHECK(labels_from_string("colon;polyp")[15]);
  CHECK_THROWS_AS(labels_from_string("colon;tonsil"), FormatError);
}
