#include "doctest.h"

#include <cmath>
#include <vector>

#include "attention_oracle.hpp"
#include "test_util.hpp"
#include "vcediff/diff_attention.hpp"

using namespace vcediff;
using namespace vcediff::oracle;

namespace {

Mat oracle_layernorm(const Mat& x, const Tensor& gamma, const Tensor& beta) {
  Mat y = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double n = static_cast<double>(x[i].size());
    double mu = 0, var = 0;
    for (double v : x[i]) mu += v;
    mu /= n;
    for (double v : x[i]) var += (v - mu) * (v - mu);
    var /= n;
    for (std::size_t j = 0; j < x[i].size(); ++j) {
      y[i][j] = (x[i][j] - mu) / std::sqrt(var + 1e-5) * gamma.data()[j] + beta.data()[j];
    }
  }
  return y;
}

Mat oracle_standard_block(const Mat& x, const DiffBlockWeights& w) {
  Mat h = oracle_attention(oracle_layernorm(x, w.ln1_gamma, w.ln1_beta), w, std::nullopt);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < x[i].size(); ++j) h[i][j] += x[i][j];
  Mat hidden = oracle_linear(oracle_layernorm(h, w.ln2_gamma, w.ln2_beta), to_mat(w.mlp_w1), to_vec(w.mlp_b1));
  for (auto& row : hidden)
    for (double& u : row) {
      u = 0.5 * u * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (u + 0.044715 * u * u * u)));
    }
  Mat out = oracle_linear(hidden, to_mat(w.mlp_w2), to_vec(w.mlp_b2));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < x[i].size(); ++j) out[i][j] += h[i][j];
  return out;
}

PretrainedBlock random_pretrained(std::size_t d, std::size_t heads, std::mt19937_64& rng) {
  using vcediff::testing::random_tensor;
  PretrainedBlock p;
  p.heads = heads;
  p.w_qkv = random_tensor({3 * d, d}, rng, -0.5, 0.5);
  p.b_qkv = random_tensor({3 * d}, rng, -0.1, 0.1);
  p.w_out = random_tensor({d, d}, rng, -0.5, 0.5);
  p.b_out = random_tensor({d}, rng, -0.1, 0.1);
  p.ln1_gamma = random_tensor({d}, rng, 0.5, 1.5);
  p.ln1_beta = random_tensor({d}, rng, -0.1, 0.1);
  p.ln2_gamma = random_tensor({d}, rng, 0.5, 1.5);
  p.ln2_beta = random_tensor({d}, rng, -0.1, 0.1);
  p.mlp_w1 = random_tensor({4 * d, d}, rng, -0.5, 0.5);
  p.mlp_b1 = random_tensor({4 * d}, rng, -0.1, 0.1);
  p.mlp_w2 = random_tensor({d, 4 * d}, rng, -0.5, 0.5);
  p.mlp_b2 = random_tensor({d}, rng, -0.1, 0.1);
  return p;
}

}  // namespace

TEST_CASE("lambda_value") {
  std::mt19937_64 rng(1);
  DiffBlockWeights w = DiffBlockWeights::init(8, 2, 0.8, rng);
  CHECK(lambda_value(w) == 0.8);

  DiffBlockWeights u = DiffBlockWeights::init(4, 2, 0.0, rng);
  u.lambda_q1.assign(std::vector<double>{1, 0});
  u.lambda_k1.assign(std::vector<double>{1, 0});
  CHECK(lambda_value(u) == doctest::Approx(std::exp(1.0) - 1.0).epsilon(1e-15));
  CHECK(lambda_value(u) == doctest::Approx(1.71828).epsilon(1e-5));
}

TEST_CASE("single token attention collapses to (1 - lambda) v") {
  std::mt19937_64 rng(2);
  DiffBlockWeights w = random_block(8, 4, rng);
  Tensor x = vcediff::testing::random_tensor({1, 8}, rng);
  AttentionTrace trace;
  diff_attention(x, w, {}, &trace);
  const double lam = oracle_lambda(w);
  Tensor v = linear(x, w.w_v, &w.b_v);
  for (std::size_t j = 0; j < 8; ++j) {
    CHECK(trace.pre_projection.at(0, j) == doctest::Approx((1.0 - lam) * v.at(0, j)).epsilon(1e-12));
  }
}

TEST_CASE("lambda forced to zero gives standard attention over group-1 heads") {
  for (int seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(100 + seed);
    DiffBlockWeights w = random_block(8, 4, rng);
    force_lambda_zero(w);
    CHECK(std::abs(lambda_value(w)) < 1e-15);
    Tensor x = vcediff::testing::random_tensor({5, 8}, rng);
    Tensor y = diff_attention(x, w);
    CHECK(max_abs_diff(y, oracle_attention(to_mat(x), w, std::nullopt)) < 1e-10);
  }
}

TEST_CASE("diff attention matches loop oracle (N=3, d=4, h=2)") {
  std::mt19937_64 rng(42);
  DiffBlockWeights w = random_block(4, 2, rng);
  Tensor x = vcediff::testing::random_tensor({3, 4}, rng);
  Tensor y = diff_attention(x, w);
  CHECK(max_abs_diff(y, oracle_attention(to_mat(x), w, oracle_lambda(w))) < 1e-10);

  DiffBlockWeights wide = random_block(12, 6, rng);
  Tensor x2 = vcediff::testing::random_tensor({7, 12}, rng);
  CHECK(max_abs_diff(diff_attention(x2, wide), oracle_attention(to_mat(x2), wide, oracle_lambda(wide))) < 1e-10);
}

TEST_CASE("attention configuration errors") {
  std::mt19937_64 rng(3);
  CHECK_THROWS_AS(DiffBlockWeights::init(8, 3, 0.8, rng), ConfigError);
  CHECK_THROWS_AS(DiffBlockWeights::init(10, 4, 0.8, rng), ConfigError);
  DiffBlockWeights w = DiffBlockWeights::init(8, 2, 0.8, rng);
  w.heads = 3;
  CHECK_THROWS_AS(diff_attention(Tensor({2, 8}, 0.1), w), ConfigError);
  w.heads = 2;
  CHECK_THROWS_AS(diff_attention(Tensor({2, 6}, 0.1), w), ShapeError);
}

TEST_CASE("attention map invariants") {
  for (int seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(500 + seed);
    DiffBlockWeights w = random_block(16, 4, rng);
    Tensor x = vcediff::testing::random_tensor({9, 16}, rng, -2, 2);
    AttentionTrace trace;
    diff_attention(x, w, {}, &trace);
    for (std::size_t p = 0; p < trace.group1_maps.size(); ++p) {
      const Tensor& a1 = trace.group1_maps[p];
      const Tensor& a2 = trace.group2_maps[p];
      for (std::size_t i = 0; i < a1.rows(); ++i) {
        double s1 = 0, s2 = 0, sd = 0;
        for (std::size_t j = 0; j < a1.cols(); ++j) {
          s1 += a1.at(i, j);
          s2 += a2.at(i, j);
          sd += a1.at(i, j) - trace.lambda * a2.at(i, j);
        }
        CHECK(std::abs(s1 - 1.0) < 1e-12);
        CHECK(std::abs(s2 - 1.0) < 1e-12);
        CHECK(std::abs(sd - (1.0 - trace.lambda)) < 1e-10);
      }
    }

    SUBCASE("lambda continuity") {
      const double delta = 1e-3;
      DiffBlockWeights moved = w.clone();
      moved.lambda_init += delta;
      AttentionTrace after;
      diff_attention(x, moved, {}, &after);
      // |delta| * ||A2 V|| bounds the change of each pair block.
      double bound_sq = 0, change_sq = 0;
      const std::size_t dh = w.head_dim();
      for (std::size_t p = 0; p < trace.group2_maps.size(); ++p) {
        Tensor av = matmul(trace.group2_maps[p], trace.values[p]);
        for (double v : av.data()) bound_sq += v * v;
        for (std::size_t i = 0; i < x.rows(); ++i)
          for (std::size_t c = 0; c < 2 * dh; ++c) {
            const double diff = after.pre_projection.at(i, 2 * p * dh + c) - trace.pre_projection.at(i, 2 * p * dh + c);
            change_sq += diff * diff;
          }
      }
      CHECK(std::sqrt(change_sq) <= delta * std::sqrt(bound_sq) * (1 + 1e-9) + 1e-15);
    }
  }
}

TEST_CASE("block gradients including lambda vectors") {
  std::mt19937_64 rng(77);
  DiffBlockWeights w = random_block(8, 4, rng);
  Tensor x = vcediff::testing::random_param({5, 8}, rng);
  Tensor probe = vcediff::testing::random_tensor({5, 8}, rng);
  auto params = w.named_parameters("block.");
  params.push_back({"x", x});
  auto report = finite_diff_check([&] { return sum(mul(block_forward(x, w), probe)); }, params);
  INFO("worst " << report.worst_name << "[" << report.worst_index << "]");
  CHECK(report.max_rel_error < 1e-4);
  CHECK(report.coordinates == 8 * 8 * 4 + 8 * 4 + 4 * 2 + 4 * 8 + 2 * 8 * 32 + 32 + 8 + 40);

  SUBCASE("with the reserved output scaling") {
    AttentionOptions opts;
    opts.scale_by_one_minus_lambda_init = true;
    auto scaled = finite_diff_check([&] { return sum(mul(block_forward(x, w, opts), probe)); }, params);
    CHECK(scaled.max_rel_error < 1e-4);
  }
}

TEST_CASE("first-row-only block equals row 0 of the full block") {
  std::mt19937_64 rng(8);
  DiffBlockWeights w = random_block(16, 4, rng);
  Tensor x = vcediff::testing::random_tensor({6, 16}, rng);
  Tensor full = block_forward(x, w);
  Tensor first = block_forward(x, w, {}, true);
  REQUIRE(first.rows() == 1);
  for (std::size_t j = 0; j < 16; ++j) CHECK(std::abs(first.at(0, j) - full.at(0, j)) < 1e-13);
}

TEST_CASE("decompose_qkv") {
  std::vector<double> numbered;
  for (int r = 0; r < 6; ++r) numbered.insert(numbered.end(), {double(r), double(r)});
  QkvSplit s = decompose_qkv(Tensor({6, 2}, numbered));
  CHECK(s.w_q.at(0, 0) == 0);
  CHECK(s.w_q.at(1, 0) == 1);
  CHECK(s.w_k.at(0, 0) == 2);
  CHECK(s.w_k.at(1, 0) == 3);
  CHECK(s.w_v.at(0, 0) == 4);
  CHECK(s.w_v.at(1, 0) == 5);

  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t d = 2 + trial;
    Tensor fused = vcediff::testing::random_tensor({3 * d, d}, rng);
    Tensor bias = vcediff::testing::random_tensor({3 * d}, rng);
    QkvSplit split = decompose_qkv(fused, bias);
    const Tensor* parts[] = {&split.w_q, &split.w_k, &split.w_v};
    const std::optional<Tensor>* bparts[] = {&split.b_q, &split.b_k, &split.b_v};
    for (std::size_t p = 0; p < 3; ++p) {
      for (std::size_t r = 0; r < d; ++r) {
        for (std::size_t c = 0; c < d; ++c) CHECK(parts[p]->at(r, c) == fused.at(p * d + r, c));
        CHECK((*bparts[p])->data()[r] == bias.data()[p * d + r]);
      }
    }
    Tensor restacked = stack_qkv(split);
    CHECK(std::equal(restacked.data().begin(), restacked.data().end(), fused.data().begin()));
  }

  CHECK_THROWS_AS(decompose_qkv(Tensor({5, 2}, 0.0)), ShapeError);
}

TEST_CASE("transfer_pretrained") {
  std::mt19937_64 rng(10);
  PretrainedBlock pre = random_pretrained(8, 4, rng);
  DiffBlockWeights w = transfer_pretrained(pre, 0.8);
  CHECK(lambda_value(w) == 0.8);
  auto same = [](const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
  };
  CHECK(same(w.mlp_w1, pre.mlp_w1));
  CHECK(same(w.mlp_b1, pre.mlp_b1));
  CHECK(same(w.mlp_w2, pre.mlp_w2));
  CHECK(same(w.mlp_b2, pre.mlp_b2));
  CHECK(same(w.ln1_gamma, pre.ln1_gamma));
  CHECK(same(w.ln2_beta, pre.ln2_beta));
  CHECK_FALSE(w.mlp_w1.shares_storage(pre.mlp_w1));
  CHECK(w.mlp_w1.requires_grad());

  SUBCASE("lambda zero matches a standard block restricted to group-1 heads") {
    force_lambda_zero(w);
    Tensor x = vcediff::testing::random_tensor({6, 8}, rng);
    CHECK(max_abs_diff(block_forward(x, w), oracle_standard_block(to_mat(x), w)) < 1e-10);
  }

  SUBCASE("missing fused bias transfers as zeros") {
    pre.b_qkv.reset();
    DiffBlockWeights nb = transfer_pretrained(pre, 0.8);
    for (double v : nb.b_q.data()) CHECK(v == 0.0);
  }

  SUBCASE("inconsistent shapes are rejected") {
    pre.w_qkv = Tensor({24, 7}, 0.0);
    CHECK_THROWS(transfer_pretrained(pre, 0.8));
  }
}
