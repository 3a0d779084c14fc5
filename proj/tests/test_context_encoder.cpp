#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "nflat/context_encoder.hpp"
#include "oracles.hpp"

using namespace nflat;
using fixtures::vec;

namespace {

struct Block {
  ParamStore store;
  SelfAttnParams p;
};

std::unique_ptr<Block> make_block(std::size_t d, std::size_t heads, std::uint64_t seed) {
  auto b = std::make_unique<Block>();
  Rng rng(seed);
  b->p = EncoderBlockParams::create(b->store, "context", d, heads, 2 * d, false, rng);
  std::mt19937_64 gen(seed);
  fixtures::randomize(b->store, gen);
  return b;
}

std::vector<double> run_single(const Block& b, const std::vector<double>& x) {
  const std::size_t d = b.p.d_model(), n = x.size() / d;
  const std::vector<std::size_t> lengths{n};
  return vec(self_attention_forward(Tensor::from({1, n, d}, x), self_layout(lengths), b.p, {}));
}

}  // namespace

TEST(SelfAttention, SingleTokenAttendsToItself) {
  const auto b = make_block(4, 2, 41);
  std::mt19937_64 gen(41);
  const auto x = fixtures::normal_vec(4, gen);
  const auto out = run_single(*b, x);
  // Weight 1 on the only key: the attention output is x W_v.
  const auto ref_params = fixtures::inter_ref(b->p);
  auto h = oracle::matmul_loop(x, ref_params.wv, 1, 4, 4);
  for (std::size_t c = 0; c < 4; ++c) h[c] += x[c];
  h = oracle::layer_norm_loop(h, ref_params.g1, ref_params.c1, 4);
  auto hid = oracle::matmul_loop(h, ref_params.w1, 1, 4, 8);
  for (std::size_t c = 0; c < 8; ++c) hid[c] = std::max(0.0, hid[c] + ref_params.b1[c]);
  auto y = oracle::matmul_loop(hid, ref_params.w2, 1, 8, 4);
  for (std::size_t c = 0; c < 4; ++c) y[c] += h[c] + ref_params.b2[c];
  y = oracle::layer_norm_loop(y, ref_params.g2, ref_params.c2, 4);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out[c], y[c], 1e-12);
}

TEST(SelfAttention, MatchesScalarLoopReference) {
  std::mt19937_64 gen(42);
  for (int trial = 0; trial < 20; ++trial) {
    const auto b = make_block(4, 1 + trial % 2, 200 + static_cast<std::uint64_t>(trial));
    const std::size_t n = 1 + trial % 5;
    const auto x = fixtures::normal_vec(n * 4, gen);
    const auto out = run_single(*b, x);
    const auto ref = fixtures::inter_ref(b->p).self_forward(x);
    for (std::size_t k = 0; k < ref.size(); ++k) ASSERT_NEAR(out[k], ref[k], 1e-10) << "trial " << trial;
  }
}

TEST(SelfAttention, DirectionAware) {
  const auto b = make_block(8, 2, 43);
  const std::vector<RelPosPair> offsets{{3, 0}, {-3, 0}};
  const auto r = vec(self_rel_encoding(offsets, b->p.w_r));
  const auto v = vec(b->p.v);
  double forward = 0.0, backward = 0.0;
  for (std::size_t c = 0; c < 8; ++c) {
    forward += v[c] * r[c];
    backward += v[c] * r[8 + c];
  }
  EXPECT_GT(std::abs(forward - backward), 1e-6);
}

TEST(SelfAttention, PaddedBatchMatchesSingle) {
  const auto b = make_block(8, 4, 44);
  std::mt19937_64 gen(44);
  const std::vector<std::size_t> lengths{5, 2, 7};
  std::vector<std::vector<double>> xs;
  for (auto n : lengths) xs.push_back(fixtures::normal_vec(n * 8, gen));
  const auto batched = vec(self_attention_forward(fixtures::pad_batch(xs, 7, 8, 3.0), self_layout(lengths), b->p, {}));
  for (std::size_t s = 0; s < lengths.size(); ++s) {
    const auto single = run_single(*b, xs[s]);
    for (std::size_t k = 0; k < single.size(); ++k) EXPECT_NEAR(batched[s * 7 * 8 + k], single[k], 1e-6);
  }
}

TEST(SelfAttention, GradientsMatchFiniteDifferences) {
  auto b = make_block(4, 2, 45);
  std::mt19937_64 gen(45);
  const std::vector<std::size_t> lengths{3, 2};
  const auto layout = self_layout(lengths);
  auto x = Tensor::from({2, 3, 4}, fixtures::normal_vec(24, gen), true);
  std::vector<Tensor> wrt{x};
  for (auto& [_, t] : b->store.items()) wrt.push_back(t);
  auto f = [&] { return oracle::probe(self_attention_forward(x, layout, b->p, {})); };
  EXPECT_LT(oracle::grad_check(f, wrt), 1e-4);
}

TEST(SelfAttention, RejectsWrongShapes) {
  const auto b = make_block(4, 2, 46);
  const std::vector<std::size_t> lengths{3};
  EXPECT_THROW(self_attention_forward(Tensor::zeros({1, 2, 4}), self_layout(lengths), b->p, {}), ShapeError);
  ParamStore store;
  Rng rng(1);
  EXPECT_THROW(EncoderBlockParams::create(store, "x", 6, 4, 12, false, rng), ContractError);
}
