#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "vcediff/errors.hpp"
#include "vcediff/temporal.hpp"

using namespace vcediff;

namespace {

BinarySeq bits(std::initializer_list<int> v) {
  BinarySeq b;
  for (int x : v) b.push_back(static_cast<std::uint8_t>(x));
  return b;
}

std::size_t covered(const std::vector<Run>& runs) {
  std::size_t n = 0;
  for (const auto& r : runs) n += r.length();
  return n;
}

ScoreMatrix random_scores(std::size_t frames, std::mt19937_64& rng) {
  ScoreMatrix s;
  s.video_id = "v";
  std::uniform_real_distribution<double> u(0, 1);
  s.probs.resize(frames);
  for (auto& row : s.probs)
    for (double& p : row) p = u(rng);
  return s;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("binarize") {
  ScoreMatrix s;
  s.video_id = "v";
  s.probs.resize(2);
  s.probs[0].fill(0.5);
  s.probs[1].fill(0.49);
  auto b = binarize(s, uniform_thresholds(0.5));
  CHECK(b[3][0] == 1);
  CHECK(b[3][1] == 0);

  Thresholds extremes = uniform_thresholds(0.5);
  extremes[5] = 0.07;
  extremes[9] = 0.83;
  s.probs[0][5] = 0.07;
  s.probs[0][9] = 0.83;
  s.probs[1][9] = 0.8299999;
  auto e = binarize(s, extremes);
  CHECK(e[5][0] == 1);
  CHECK(e[9][0] == 1);
  CHECK(e[9][1] == 0);

  CHECK_THROWS_AS(binarize(s, uniform_thresholds(0.99)), DomainError);

  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    ScoreMatrix r = random_scores(50, rng);
    Thresholds thr;
    std::uniform_real_distribution<double> u(0.05, 0.95);
    for (double& t : thr) t = u(rng);
    auto got = binarize(r, thr);
    for (std::size_t t = 0; t < 50; ++t)
      for (std::size_t c = 0; c < kNumClasses; ++c) CHECK(got[c][t] == (r.probs[t][c] >= thr[c] ? 1 : 0));
  }
}

TEST_CASE("median filter") {
  CHECK(median_filter_binary(bits({0, 0, 1, 0, 0}), 7) == bits({0, 0, 0, 0, 0}));
  CHECK(median_filter_binary(BinarySeq(9, 1), 7) == BinarySeq(9, 1));
  CHECK(median_filter_binary(bits({1, 0, 1}), 1) == bits({1, 0, 1}));
  // a truncated border window of four with two ones is a tie
  CHECK(median_filter_binary(bits({1, 1, 0, 0, 0, 0, 0}), 7)[0] == 0);
  CHECK(median_filter_binary(BinarySeq{}, 7).empty());
  CHECK_THROWS_AS(median_filter_binary(bits({1}), 4), ConfigError);
  CHECK_THROWS_AS(median_filter_binary(bits({1}), 0), ConfigError);

  SUBCASE("sliding-window majority oracle") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      std::mt19937_64 rng(seed);
      const double p = 0.1 + 0.8 * (seed % 10) / 10.0;
      auto seq = oracle::random_bits(200, p, rng);
      for (std::size_t w : {1u, 3u, 7u, 11u}) CHECK(median_filter_binary(seq, w) == oracle::sliding_majority(seq, w));
    }
  }

  SUBCASE("locality") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 100; ++trial) {
      auto seq = oracle::random_bits(60, 0.5, rng);
      const auto base = median_filter_binary(seq, 7);
      const std::size_t k = rng() % 60;
      seq[k] ^= 1;
      const auto flipped = median_filter_binary(seq, 7);
      for (std::size_t t = 0; t < 60; ++t)
        if (t + 3 < k || t > k + 3) CHECK(flipped[t] == base[t]);
    }
  }
}

TEST_CASE("runs") {
  CHECK(runs_from_binary(bits({1, 1, 0, 1})) == std::vector<Run>{{0, 1}, {3, 3}});
  CHECK(runs_from_binary(BinarySeq(5, 0)).empty());
  CHECK(runs_from_binary(BinarySeq(3, 1)) == std::vector<Run>{{0, 2}});
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    auto seq = oracle::random_bits(1 + rng() % 100, 0.5, rng);
    auto runs = runs_from_binary(seq);
    CHECK(binary_from_runs(runs, seq.size()) == seq);
    for (std::size_t i = 1; i < runs.size(); ++i) CHECK(runs[i].start > runs[i - 1].end + 1);
  }
}

TEST_CASE("gap merging") {
  CHECK(merge_gaps({{0, 2}, {8, 9}}, 5) == std::vector<Run>{{0, 9}});
  CHECK(merge_gaps({{0, 2}, {9, 9}}, 5) == std::vector<Run>{{0, 2}, {9, 9}});
  CHECK(merge_gaps({{0, 0}, {2, 2}, {4, 4}}, 1) == std::vector<Run>{{0, 4}});
  CHECK(merge_gaps({}, 5).empty());
  CHECK_THROWS_AS(merge_gaps({{5, 6}, {1, 2}}, 5), UsageError);
  CHECK_THROWS_AS(merge_gaps({{1, 4}, {4, 6}}, 5), UsageError);

  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 150;
    auto seq = oracle::random_bits(n, 0.2 + 0.1 * (trial % 5), rng);
    const std::size_t g = rng() % 8;
    auto runs = runs_from_binary(seq);
    auto merged = merge_gaps(runs, g);
    CHECK(binary_from_runs(merged, n) == oracle::closing(seq, g));
    CHECK(covered(merged) >= covered(runs));
    for (std::size_t i = 1; i < merged.size(); ++i) CHECK(merged[i].start - merged[i - 1].end - 1 > g);
  }
}

TEST_CASE("short-run removal") {
  CHECK(drop_short({{0, 1}, {5, 7}}, 3) == std::vector<Run>{{5, 7}});
  std::vector<Run> some = {{0, 0}, {3, 9}, {12, 13}};
  CHECK(drop_short(some, 1) == some);
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    auto runs = runs_from_binary(oracle::random_bits(100, 0.6, rng));
    const std::size_t m = 1 + rng() % 6;
    std::vector<Run> expect;
    std::copy_if(runs.begin(), runs.end(), std::back_inserter(expect), [&](const Run& r) { return r.end - r.start + 1 >= m; });
    auto got = drop_short(runs, m);
    CHECK(got == expect);
    CHECK(covered(got) <= covered(runs));
  }
}

TEST_CASE("event scores") {
  std::vector<double> col(10, 0.8);
  auto e = score_events({{2, 5}}, col, 4);
  REQUIRE(e.size() == 1);
  CHECK(e[0].score == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(e[0].class_id == 4);
  std::vector<double> two = {0.2, 0.4};
  CHECK(score_events({{0, 1}}, two, 0)[0].score == doctest::Approx(0.3).epsilon(1e-15));
  CHECK_THROWS_AS(score_events({{0, 2}}, two, 0), UsageError);

  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> probs(40);
    for (double& p : probs) p = u(rng);
    auto runs = runs_from_binary(oracle::random_bits(40, 0.5, rng));
    auto events = score_events(runs, probs, 1);
    for (std::size_t i = 0; i < runs.size(); ++i) {
      double s = 0;
      for (std::size_t t = runs[i].start; t <= runs[i].end; ++t) s += probs[t];
      CHECK(std::abs(events[i].score - s / (runs[i].end - runs[i].start + 1)) < 1e-15);
    }
  }
}

TEST_CASE("post-processing pipeline") {
  const TemporalConfig cfg;
  CHECK(cfg.window == 7);
  CHECK(cfg.max_gap == 5);
  CHECK(cfg.min_len == 3);

  SUBCASE("final events respect gap and length") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 200; ++trial) {
      auto seq = oracle::random_bits(300, 0.3 + 0.05 * (trial % 8), rng);
      auto runs = postprocess(seq, cfg);
      for (std::size_t i = 0; i < runs.size(); ++i) {
        CHECK(runs[i].length() >= cfg.min_len);
        if (i > 0) CHECK(runs[i].start - runs[i - 1].end - 1 > cfg.max_gap);
      }
    }
  }

  SUBCASE("a second pass can erase a three-frame event") {
    // Ones at 10, 11, 12 and 14: the median keeps 11..13, which passes the
    // length filter; a second median over a lone 3-run removes it.
    BinarySeq seq(30, 0);
    for (std::size_t t : {10u, 11u, 12u, 14u}) seq[t] = 1;
    auto once = postprocess(seq, cfg);
    REQUIRE(once == std::vector<Run>{{11, 13}});
    CHECK(postprocess(binary_from_runs(once, 30), cfg).empty());
  }

  SUBCASE("idempotent when min_len >= ceil(w/2) and events stay w frames from the borders") {
    TemporalConfig strict = cfg;
    strict.min_len = 4;
    std::mt19937_64 rng(8);
    std::size_t checked = 0;
    for (int trial = 0; trial < 2000; ++trial) {
      const std::size_t n = 40 + rng() % 200;
      auto seq = oracle::random_bits(n, 0.2 + 0.1 * (trial % 6), rng);
      auto once = postprocess(seq, strict);
      const bool interior = std::all_of(once.begin(), once.end(), [&](const Run& r) {
        return r.start >= strict.window && r.end + strict.window < n;
      });
      if (!interior) continue;
      ++checked;
      CHECK(postprocess(binary_from_runs(once, n), strict) == once);
    }
    CHECK(checked > 500);
  }

  SUBCASE("detect_events runs every class") {
    ScoreMatrix s;
    s.video_id = "v";
    s.probs.assign(40, ProbRow{});
    for (std::size_t t = 10; t < 20; ++t) s.probs[t][4] = 0.9;
    for (std::size_t t = 0; t < 40; ++t) s.probs[t][2] = 0.7;
    auto ev = detect_events(s, uniform_thresholds(0.5), cfg);
    REQUIRE(ev.size() == 2);
    CHECK(ev[0].class_id == 2);
    CHECK(ev[0].start == 0);
    CHECK(ev[0].end == 39);
    CHECK(ev[0].score == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(ev[1].class_id == 4);
    CHECK(ev[1].start == 10);
    CHECK(ev[1].end == 19);
    CHECK(ev[1].score == doctest::Approx(0.9).epsilon(1e-15));
  }
}

TEST_CASE("events json") {
  CHECK(emit_events_json("v1", {}) == "{\"video_id\": \"v1\", \"events\": []}");
  const std::string golden = slurp(std::filesystem::path(VCEDIFF_TEST_DATA_DIR) / "golden_events.json");
  CHECK(emit_events_json("video_a", {{4, 10, 20, 0.5}}) + "\n" == golden);

  SUBCASE("sorted by label order then start") {
    std::vector<Event> ev = {{15, 3, 4, 0.25}, {4, 9, 9, 0.125}, {4, 1, 2, 1.0}};
    auto doc = parse_events_json(emit_events_json("x", ev));
    REQUIRE(doc.events.size() == 3);
    CHECK(doc.events[0].start == 1);
    CHECK(doc.events[1].start == 9);
    CHECK(doc.events[2].class_id == 15);
  }

  SUBCASE("parse then emit is byte-identical") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<Event> ev;
      for (int k = 0; k < 5; ++k) {
        const std::size_t s = rng() % 1000;
        ev.push_back({rng() % kNumClasses, s, s + rng() % 50, u(rng)});
      }
      const std::string first = emit_events_json("video \"" + std::to_string(trial) + "\"", ev);
      const auto parsed = parse_events_json(first);
      CHECK(emit_events_json(parsed.video_id, parsed.events) == first);
    }
  }

  CHECK_THROWS_AS(emit_events_json("v", {{17, 0, 1, 0.5}}), UsageError);
  CHECK_THROWS_AS(parse_events_json("{\"video_id\": \"v\", \"events\": [{\"label\": \"tonsil\", \"start_frame\": 1, "
                                    "\"end_frame\": 2, \"score\": 0.1}]}"),
                  FormatError);
  CHECK_THROWS_AS(parse_events_json("not json"), FormatError);
}

TEST_CASE("score and threshold files") {
  std::mt19937_64 rng(10);
  std::vector<ScoreMatrix> videos = {random_scores(12, rng), random_scores(5, rng)};
  videos[0].video_id = "a";
  videos[1].video_id = "b";
  videos[1].probs[2][3] = 1.0;
  videos[1].probs[2][4] = 0.0;
  const auto dir = std::filesystem::temp_directory_path();
  write_scores(dir / "vcediff_scores.csv", videos);
  auto back = read_scores(dir / "vcediff_scores.csv");
  REQUIRE(back.size() == 2);
  CHECK(back[0].probs == videos[0].probs);
  CHECK(back[1].probs == videos[1].probs);
  CHECK(back[1].video_id == "b");

  Thresholds thr = uniform_thresholds(0.5);
  thr[0] = 0.05;
  thr[16] = 0.95;
  thr[7] = 0.07;
  write_thresholds(dir / "vcediff_thr.txt", thr);
  CHECK(read_thresholds(dir / "vcediff_thr.txt") == thr);

  {
    std::ofstream bad(dir / "vcediff_bad_scores.csv");
    bad << "video_id,frame_index\n";
  }
  CHECK_THROWS_AS(read_scores(dir / "vcediff_bad_scores.csv"), FormatError);
  std::filesystem::remove(dir / "vcediff_scores.csv");
  std::filesystem::remove(dir / "vcediff_thr.txt");
  std::filesystem::remove(dir / "vcediff_bad_scores.csv");
}
