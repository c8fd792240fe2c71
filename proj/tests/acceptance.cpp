// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any
// fails. Expects the vcediff binary path as VCEDIFF_CLI and the golden file
// directory as VCEDIFF_TEST_DATA_DIR.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "attention_oracle.hpp"
#include "oracles.hpp"
#include "vcediff/commands.hpp"
#include "vcediff/evaluation.hpp"
#include "vcediff/model_check.hpp"
#include "vcediff/optimizer.hpp"
#include "vcediff/temporal.hpp"
#include "vcediff/training.hpp"

using namespace vcediff;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
  const RunConfig config;
  const auto r = model_gradcheck(config);
  const bool shape = config.model.depth == 2 && config.model.model_dim == 64;
  return {shape && r.overall.max_rel_error < 1e-4 && r.seconds < 60.0,
          fmt("depth %zu d %zu, %zu coordinates in %zu tensors, max rel error %.3e (%s[%zu]), %.1f s",
              config.model.depth, config.model.model_dim, r.overall.coordinates, r.per_param.size(),
              r.overall.max_rel_error, r.overall.worst_name.c_str(), r.overall.worst_index, r.seconds)};
}

Outcome reduction_identities() {
  std::mt19937_64 rng(42);

  // (a) lambda = 0 against standard attention over the group-1 heads.
  double attn_err = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t d = trial % 2 ? 64 : 16, heads = trial % 4 < 2 ? 4 : 2;
    DiffBlockWeights w = oracle::random_block(d, heads, rng);
    oracle::force_lambda_zero(w);
    const Tensor x = testing::random_tensor({1 + rng() % 9, d}, rng);
    attn_err = std::max(attn_err, oracle::max_abs_diff(diff_attention(x, w),
                                                       oracle::oracle_attention(oracle::to_mat(x), w, std::nullopt)));
  }

  // (b) zero focusing and unit weights against hand-written BCE.
  double bce_err = 0.0;
  LossConfig flat;
  flat.gamma_pos = flat.gamma_neg = 0.0;
  const std::vector<double> ones(kNumClasses, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor z = testing::random_tensor({4, kNumClasses}, rng, -8, 8);
    const Tensor y = testing::random_tensor({4, kNumClasses}, rng, 0, 1);
    double bce = 0.0;
    for (std::size_t i = 0; i < z.numel(); ++i) {
      const double p = 1.0 / (1.0 + std::exp(-z.data()[i])), t = y.data()[i];
      bce -= t * std::log(p) + (1 - t) * std::log(1 - p);
    }
    bce /= static_cast<double>(z.numel());
    bce_err = std::max(bce_err, std::abs(asymmetric_focal_loss(z, y, ones, flat).item() - bce));
  }

  // (c) eps = 0 smoothing and lam = 1 mixup return their inputs.
  bool identities = true;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 6;
    std::vector<Image> imgs;
    TargetMatrix t(n);
    for (std::size_t i = 0; i < n; ++i) {
      Image img(3, 4, 4);
      img.pixels = testing::random_values(img.pixels.size(), rng);
      imgs.push_back(img);
      for (double& v : t[i]) v = std::uniform_real_distribution<double>(0, 1)(rng);
    }
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = (i + 1 + trial) % n;
    const auto m = mixup_with(imgs, t, 1.0, perm);
    identities = identities && label_smooth(t, 0.0) == t && m.targets == t;
    for (std::size_t i = 0; i < n; ++i) identities = identities && m.images[i].pixels == imgs[i].pixels;
  }

  return {attn_err < 1e-10 && bce_err < 1e-12 && identities,
          fmt("lambda=0 attention %.2e, zero-focus ASL vs BCE %.2e, smoothing/mixup identities %s", attn_err,
              bce_err, identities ? "exact" : "BROKEN")};
}

struct OracleTally {
  std::string name;
  std::size_t instances = 0, failures = 0;
};

Outcome oracle_equivalence() {
  std::vector<OracleTally> tallies;
  auto tally = [&](const std::string& name, std::size_t n, const std::function<bool(std::mt19937_64&)>& one) {
    OracleTally t{name};
    for (std::size_t i = 0; i < n; ++i) {
      std::mt19937_64 rng(1000 * (tallies.size() + 1) + i);
      ++t.instances;
      if (!one(rng)) ++t.failures;
    }
    tallies.push_back(t);
  };

  tally("median", 120, [](auto& rng) {
    const auto seq = oracle::random_bits(1 + rng() % 200, 0.1 + 0.8 * (rng() % 10) / 10.0, rng);
    const std::size_t w = 2 * (rng() % 6) + 1;
    return median_filter_binary(seq, w) == oracle::sliding_majority(seq, w);
  });
  tally("gap merge", 120, [](auto& rng) {
    const auto seq = oracle::random_bits(1 + rng() % 150, 0.1 + 0.1 * (rng() % 6), rng);
    const std::size_t g = rng() % 8;
    return binary_from_runs(merge_gaps(runs_from_binary(seq), g), seq.size()) == oracle::closing(seq, g);
  });
  tally("runs", 120, [](auto& rng) {
    const auto seq = oracle::random_bits(1 + rng() % 100, 0.5, rng);
    return binary_from_runs(runs_from_binary(seq), seq.size()) == seq;
  });
  auto scores_of = [](std::size_t n, auto& rng) {
    std::vector<double> s(n);
    const double step = rng() % 2 ? 0.05 : 1e-9;  // coarse steps force ties
    for (double& v : s) v = std::round(std::uniform_real_distribution<double>(0, 1)(rng) / step) * step;
    return s;
  };
  tally("AP", 120, [&](auto& rng) {
    const std::size_t n = 1 + rng() % 40;
    const auto s = scores_of(n, rng);
    const auto y = oracle::random_bits(n, 0.3, rng);
    return std::abs(average_precision(s, y) - oracle::ap_enumeration(s, y)) < 1e-12;
  });
  tally("AUC", 120, [&](auto& rng) {
    const std::size_t n = 2 + rng() % 60;
    const auto s = scores_of(n, rng);
    const auto y = oracle::random_bits(n, 0.4, rng);
    return std::abs(roc_auc(s, y) - oracle::auc_pairwise(s, y)) < 1e-12;
  });
  tally("temporal mAP", 120, [](auto& rng) {
    // at most five events in total, one or two videos, tied scores
    const std::size_t videos = 1 + rng() % 2, total = 1 + rng() % 5, n_gt = rng() % (total + 1);
    std::vector<VideoEvents> pred(videos), gt(videos);
    std::vector<oracle::Interval> pi, gi;
    for (std::size_t v = 0; v < videos; ++v) pred[v].video_id = gt[v].video_id = "v" + std::to_string(v);
    for (std::size_t i = 0; i < total; ++i) {
      const std::size_t v = rng() % videos, start = rng() % 12, len = 1 + rng() % 8;
      const double score = static_cast<double>(rng() % 5) / 4.0;
      if (i < n_gt) {
        gt[v].events.push_back({6, start, start + len - 1, 1.0});
        gi.push_back({v, start, start + len - 1, 1.0});
      } else {
        pred[v].events.push_back({6, start, start + len - 1, score});
      }
    }
    for (std::size_t v = 0; v < videos; ++v)
      for (const auto& e : pred[v].events) pi.push_back({v, e.start, e.end, e.score});
    for (double thr : {0.3, 0.5, 0.95})
      if (std::abs(temporal_map(pred, gt, thr).ap[6] - oracle::temporal_ap_exhaustive(pi, gi, thr)) > 1e-12)
        return false;
    return true;
  });
  tally("threshold search", 120, [](auto& rng) {
    // scores halfway between grid points inside the searched range
    const std::size_t n = 10 + rng() % 30;
    std::vector<ProbRow> s(n);
    std::vector<LabelVector> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (double& v : s[i]) v = static_cast<double>(10 + rng() % 85) / 100.0 + 0.005;
      for (std::size_t c = 0; c < kNumClasses; ++c) y[i][c] = rng() % 3 == 0;
    }
    const auto thr = threshold_search(s, y);
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      std::vector<double> col(n);
      oracle::Bits lab(n);
      for (std::size_t i = 0; i < n; ++i) {
        col[i] = s[i][c];
        lab[i] = y[i][c];
      }
      if (oracle::best_f1_midpoints(col, lab) - f1_at(col, lab, thr[c]).f1 > 0.01) return false;
    }
    return true;
  });

  bool pass = true;
  std::string detail;
  for (const auto& t : tallies) {
    pass = pass && t.failures == 0 && t.instances >= 100;
    detail += (detail.empty() ? "" : ", ") + t.name + " " + std::to_string(t.instances - t.failures) + "/" +
              std::to_string(t.instances);
  }
  return {pass, detail};
}

Outcome constants() {
  const RunConfig c;
  std::vector<std::string> wrong;
  auto expect = [&](const char* name, double got, double want) {
    if (got != want) wrong.push_back(fmt("%s=%g (want %g)", name, got, want));
  };
  expect("gamma_pos", c.loss.gamma_pos, 1);
  expect("gamma_neg", c.loss.gamma_neg, 4);
  expect("mixup_alpha", c.data.mixup_alpha, 0.3);
  expect("eps_smooth", c.loss.eps_smooth, 0.05);
  expect("ema_decay", c.optim.ema_decay, 0.999);
  expect("weight_decay", c.optim.weight_decay, 5e-4);
  expect("lr_backbone", c.optim.lr_backbone, 9e-5);
  expect("lr_head", c.optim.lr_head, 3e-4);
  expect("contrastive_weight", c.loss.contrastive_weight, 0.4);
  expect("pos_weight_min", c.loss.pos_weight_min, 1);
  expect("pos_weight_max", c.loss.pos_weight_max, 100);
  expect("seed", static_cast<double>(c.seed), 42);
  expect("window", static_cast<double>(c.temporal.window), 7);
  expect("max_gap", static_cast<double>(c.temporal.max_gap), 5);
  expect("min_len", static_cast<double>(c.temporal.min_len), 3);
  expect("lambda_init", c.model.lambda_init, 0.8);
  expect("tau_cap", c.model.tau_cap, 100);
  expect("dropout", c.model.dropout_p, 0.4);
  expect("reduction", static_cast<double>(c.model.reduction), 16);
  std::string detail = "19 constants";
  for (const auto& w : wrong) detail += ", " + w;
  return {wrong.empty(), detail};
}

Outcome imbalance() {
  const auto t0 = Clock::now();
  constexpr std::size_t kRare = 6;
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed : {42, 43, 44}) {
    SynthSpec s;
    s.seed = seed;
    s.train_videos = 8;
    s.val_videos = 4;
    s.test_videos = 0;
    s.frames_per_video = 500;
    s.mean_event_length = 5;
    s.noise = 0.35;
    s.amplitude = 1.0;
    s.prevalence = {};
    s.prevalence[0] = 0.05;
    s.prevalence[2] = 0.25;
    s.prevalence[3] = 0.35;
    s.prevalence[4] = 0.2;
    s.prevalence[9] = 0.05;
    s.prevalence[kRare] = 0.005;
    double ap[2];
    for (int arm = 0; arm < 2; ++arm) {
      RunConfig c;
      c.seed = seed;
      c.data.synth = s;
      c.optim.epochs = 3;
      c.optim.steps_per_epoch = 500;
      if (arm == 1) {
        c.data.sampler = "uniform";
        c.classification_loss = "bce";
      }
      const Dataset d = dataset_from_synth(synth_dataset(s), c.model.feature_dim);
      const TrainResult r = train(c, d);
      ap[arm] = evaluate_split(r.ema, d.val, d.text, c, std::vector<double>(kNumClasses, 1.0))
                    .metrics.per_class[kRare]
                    .ap;
    }
    wins += ap[0] > ap[1];
    detail += fmt("seed %llu %.4f vs %.4f; ", static_cast<unsigned long long>(seed), ap[0], ap[1]);
  }
  const double secs = seconds_since(t0);
  return {wins >= 2 && secs < 15 * 60,
          "rare-class val AP sampler+ASL vs uniform+BCE: " + detail + fmt("%d/3 wins, %.0f s", wins, secs)};
}

// Events from noisy copies of label runs: boundaries jitter and some events
// are dropped or invented.
std::vector<VideoEvents> perturb(const std::vector<VideoEvents>& gt, std::mt19937_64& rng) {
  std::vector<VideoEvents> out;
  for (const auto& v : gt) {
    VideoEvents p{v.video_id, {}};
    for (const auto& e : v.events) {
      if (rng() % 5 == 0) continue;
      const std::size_t s = e.start + rng() % 3, t = e.end + rng() % 3;
      p.events.push_back({e.class_id, std::min(s, t), t, static_cast<double>(rng() % 100) / 100.0});
      if (rng() % 4 == 0) p.events.push_back({(e.class_id + 1) % kNumClasses, e.start, e.end, 0.3});
    }
    out.push_back(p);
  }
  return out;
}

Outcome temporal_sanity() {
  std::size_t runs = 0, ordered = 0, perfect = 0, identity_runs = 0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    SynthSpec s = SynthSpec::desk_default();
    s.seed = seed;
    s.train_videos = 1;
    s.val_videos = 1;
    s.test_videos = 3;
    s.frames_per_video = 200;
    s.mean_event_length = 4.0 + static_cast<double>(seed % 5) * 4.0;
    const auto records = records_of(synth_dataset(s).test);
    const auto gt = events_from_labels(records);
    const FrameMetrics fm;
    std::mt19937_64 rng(seed);
    for (int k = 0; k < 5; ++k) {
      const auto r = evaluate(perturb(gt, rng), gt, fm);
      ++runs;
      bool ok = r.overall_map95 <= r.overall_map50;
      for (const auto& v : r.videos) ok = ok && v.map95 <= v.map50;
      ordered += ok;
    }
    const auto same = evaluate(gt, gt, fm);
    ++runs;
    ++identity_runs;
    ordered += same.overall_map95 <= same.overall_map50;
    perfect += same.overall_map50 == 1.0 && same.overall_map95 == 1.0;
  }
  return {ordered == runs && perfect == identity_runs,
          fmt("mAP@0.95 <= mAP@0.5 in %zu/%zu runs, ground truth as prediction scores 1.0 in %zu/%zu", ordered,
              runs, perfect, identity_runs)};
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(VCEDIFF_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome determinism(const fs::path& work) {
  const auto t0 = Clock::now();
  fs::create_directories(work);
  {
    std::ofstream(work / "config.json") << "{\n  \"seed\": 42\n}\n";
  }
  std::vector<std::string> problems;
  for (const char* run : {"a", "b"}) {
    const int code = run_cli("train -q --config " + (work / "config.json").string() + " --seed 42 --out " +
                                 (work / run).string(),
                             work / (std::string(run) + ".out"));
    if (code != 0) problems.push_back(std::string("train ") + run + " exit " + std::to_string(code));
  }
  std::size_t identical = 0;
  for (const char* f : {"run.log", "step_losses.txt", "last.ckpt", "best.ckpt", "last.ckpt.manifest",
                        "best.ckpt.manifest"}) {
    const std::string a = slurp(work / "a" / f), b = slurp(work / "b" / f);
    if (a.empty() || a != b) problems.push_back(std::string(f) + " differs");
    else ++identical;
  }

  // Events from the trained model, twice through the staged commands.
  const fs::path ds = work / "ds";
  {
    std::ofstream(work / "spec.json") << R"({"seed": 42, "train_videos": 1, "val_videos": 1, "test_videos": 2})";
  }
  run_cli("synth -q " + (work / "spec.json").string() + " --out " + ds.string(), work / "synth.out");
  write_thresholds(work / "thr.txt", uniform_thresholds(0.5));
  std::string events[2];
  for (int i = 0; i < 2; ++i) {
    const auto scores = work / ("scores" + std::to_string(i) + ".csv");
    const auto ev = work / ("events" + std::to_string(i) + ".jsonl");
    const int p = run_cli("predict -q --checkpoint " + (work / "a" / "best.ckpt").string() + " --dataset " +
                              ds.string() + " --out " + scores.string(),
                          work / "predict.out");
    const int e = run_cli("events -q --scores " + scores.string() + " --thresholds " + (work / "thr.txt").string() +
                              " --out " + ev.string(),
                          work / "events.out");
    if (p != 0 || e != 0) problems.push_back("predict/events exit " + std::to_string(p) + "/" + std::to_string(e));
    events[i] = slurp(ev);
  }
  if (events[0].empty() || events[0] != events[1]) problems.push_back("events differ between runs");

  // Golden events: a fixed score pattern through the full temporal pipeline.
  std::vector<VideoEvents> videos;
  for (std::size_t v = 0; v < 2; ++v) {
    ScoreMatrix s;
    s.video_id = "golden_" + std::to_string(v);
    s.probs.resize(300);
    for (std::size_t t = 0; t < 300; ++t)
      for (std::size_t c = 0; c < kNumClasses; ++c)
        s.probs[t][c] = 0.5 + 0.45 * std::sin(0.013 * static_cast<double>((c + 1) * (t + 7 * v)) + 0.7 * c);
    videos.push_back({s.video_id, detect_events(s, uniform_thresholds(0.6), TemporalConfig{})});
  }
  const fs::path golden = fs::path(VCEDIFF_TEST_DATA_DIR) / "golden_pipeline_events.jsonl";
  if (std::getenv("VCEDIFF_UPDATE_GOLDEN")) write_events_file(golden, videos);
  write_events_file(work / "golden_check.jsonl", videos);
  const bool golden_ok = fs::exists(golden) && slurp(golden) == slurp(work / "golden_check.jsonl");
  if (!golden_ok) problems.push_back("golden events differ");

  std::string detail = fmt("2 seed-42 train runs: %zu/6 artifacts identical; staged events identical: %s; golden "
                           "events: %s; %.0f s",
                           identical, events[0] == events[1] && !events[0].empty() ? "yes" : "no",
                           golden_ok ? "match" : "MISMATCH", seconds_since(t0));
  for (const auto& p : problems) detail += "; " + p;
  return {problems.empty(), detail};
}

Outcome closed_forms() {
  std::mt19937_64 rng(42);
  double ema_err = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 1 + rng() % 8;
    Tensor p = Tensor::parameter({n}, testing::random_values(n, rng, -3, 3));
    const Tensor s0({n}, testing::random_values(n, rng, -3, 3));
    EmaState e = EmaState::create({{"p", s0}}, 0.999);
    for (int k = 1; k <= 2000; ++k) {
      ema_update(e, {{"p", p}});
      for (std::size_t i = 0; i < n; ++i) {
        const double want = p.data()[i] + std::pow(0.999, k) * (s0.data()[i] - p.data()[i]);
        ema_err = std::max(ema_err, std::abs(e.shadow[0].tensor.data()[i] - want));
      }
    }
  }

  bool endpoints = true;
  double curve_err = 0.0;
  const OneCycleConfig oc;
  for (double lr_max : {9e-5, 3e-4}) {
    for (std::size_t total : {10u, 97u, 625u, 1000u, 4999u}) {
      const std::size_t peak = static_cast<std::size_t>(std::floor(0.3 * static_cast<double>(total)));
      endpoints = endpoints && onecycle_lr(0, total, lr_max) == lr_max / 25.0 &&
                  onecycle_lr(peak, total, lr_max) == lr_max &&
                  onecycle_lr(total, total, lr_max) == lr_max / (3e-4 / 9e-8);
      const double lo = lr_max / 25.0, floor = lr_max * 9e-8 / 3e-4;
      for (std::size_t s = 0; s <= total; ++s) {
        const double want = s <= peak ? lo + (lr_max - lo) * (1 - std::cos(std::numbers::pi * s / peak)) / 2
                                      : floor + (lr_max - floor) *
                                                    (1 + std::cos(std::numbers::pi * (s - peak) / (total - peak))) / 2;
        curve_err = std::max(curve_err, std::abs(onecycle_lr(s, total, lr_max, oc) - want) / lr_max);
      }
    }
  }
  const double head_floor = onecycle_lr(100, 100, 3e-4);
  endpoints = endpoints && std::abs(head_floor - 9e-8) <= 1e-15 * 9e-8 * 4;
  return {ema_err < 1e-12 && endpoints && curve_err < 1e-12,
          fmt("EMA vs p + b^k (s - p) max %.2e over 2000 steps; OneCycle endpoints %s (head floor %.17g); "
              "cosine curve rel err %.2e",
              ema_err, endpoints ? "exact" : "WRONG", head_floor, curve_err)};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "vcediff_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {"gradient suite", gradient_suite},
      {"reduction identities", reduction_identities},
      {"oracle equivalence", oracle_equivalence},
      {"constants conformance", constants},
      {"imbalance efficacy", imbalance},
      {"temporal pipeline sanity", temporal_sanity},
      {"determinism", [&] { return determinism(work / "determinism"); }},
      {"EMA and schedule closed forms", closed_forms},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << i + 1 << ". " << criteria[i].name << ": " << o.detail
              << std::endl;
  }
  std::cout << criteria.size() - failed << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed ? 1 : 0;
}
