// Random inputs and parameter sets shared by the unit and acceptance tests.
#pragma once

#include <algorithm>
#include <random>
#include <vector>

#include "nflat/encoder_block.hpp"
#include "nflat/interformer.hpp"
#include "nflat/params.hpp"
#include "oracles.hpp"

namespace fixtures {

using nflat::Tensor;

inline std::vector<double> vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

/// Overwrites every parameter with N(0, scale^2) draws; layer-norm gains are
/// drawn around 1 so the blocks stay well conditioned.
inline void randomize(nflat::ParamStore& store, std::mt19937_64& gen, double scale = 0.5) {
  std::normal_distribution<double> dist(0.0, scale);
  for (auto& [name, t] : store.items()) {
    const bool gain = name.find("gain") != std::string::npos;
    for (auto& x : t.mutable_data()) x = (gain ? 1.0 : 0.0) + dist(gen);
  }
}

inline oracle::InterRef inter_ref(const nflat::EncoderBlockParams& p, bool use_rel = true) {
  oracle::InterRef r;
  r.d = p.d_model();
  r.heads = p.heads;
  r.d_ff = p.w_1.dim(1);
  r.wq = vec(p.w_q);
  r.wk = vec(p.w_k);
  r.wv = vec(p.w_v);
  r.wr = vec(p.w_r);
  r.u = vec(p.u);
  r.v = vec(p.v);
  r.w1 = vec(p.w_1);
  r.b1 = vec(p.b_1);
  r.w2 = vec(p.w_2);
  r.b2 = vec(p.b_2);
  r.g1 = vec(p.ln1_gain);
  r.c1 = vec(p.ln1_bias);
  r.g2 = vec(p.ln2_gain);
  r.c2 = vec(p.ln2_bias);
  r.use_rel = use_rel;
  return r;
}

/// `m` distinct random spans inside a sentence of n characters, in
/// (head, tail) order, with <non_word> appended when requested.
inline std::vector<nflat::MatchedWord> random_words(std::size_t n, std::size_t m, std::mt19937_64& gen,
                                                    bool non_word = true) {
  std::vector<std::pair<int, int>> all;
  for (int h = 1; h <= static_cast<int>(n); ++h)
    for (int t = h + 1; t <= static_cast<int>(n); ++t) all.emplace_back(h, t);
  std::shuffle(all.begin(), all.end(), gen);
  all.resize(std::min(m, all.size()));
  std::sort(all.begin(), all.end());
  std::vector<nflat::MatchedWord> out;
  int id = 0;
  for (auto [h, t] : all) out.push_back({id++, std::u32string(static_cast<std::size_t>(t - h + 1), U'w'), h, t});
  if (non_word) out = nflat::append_non_word(std::move(out), n);
  return out;
}

/// Copies per-sentence [n_b x d] blocks into a zero-padded [B x rows x d]
/// tensor, filling the padding with `pad` so masking mistakes show up.
inline Tensor pad_batch(const std::vector<std::vector<double>>& blocks, std::size_t rows, std::size_t d,
                        double pad = 0.0, bool requires_grad = false) {
  std::vector<double> out(blocks.size() * rows * d, pad);
  for (std::size_t b = 0; b < blocks.size(); ++b)
    std::copy(blocks[b].begin(), blocks[b].end(), out.begin() + static_cast<std::ptrdiff_t>(b * rows * d));
  return Tensor::from({blocks.size(), rows, d}, std::move(out), requires_grad);
}

inline std::vector<double> normal_vec(std::size_t n, std::mt19937_64& gen, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(gen);
  return v;
}

}  // namespace fixtures
