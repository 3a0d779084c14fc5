// Flat-lattice baseline: characters and matched words share one sequence and
// attend to each other with head/tail offsets. Kept for cost comparison.
#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include "nflat/attention.hpp"
#include "nflat/encoder_block.hpp"
#include "nflat/lexicon.hpp"

namespace nflat {

/// Characters in order, then matched words. Characters have head == tail.
struct FlatLattice {
  std::size_t chars = 0;
  std::vector<MatchedWord> words;
  std::vector<std::u32string> surface;
  std::vector<int> head;
  std::vector<int> tail;

  std::size_t size() const { return head.size(); }
};

/// <non_word> entries are skipped: the flat lattice has no such token.
inline FlatLattice build_flat_lattice(std::u32string_view chars, std::span<const MatchedWord> matches) {
  FlatLattice lat;
  lat.chars = chars.size();
  for (std::size_t i = 1; i <= chars.size(); ++i) {
    lat.surface.emplace_back(1, chars[i - 1]);
    lat.head.push_back(static_cast<int>(i));
    lat.tail.push_back(static_cast<int>(i));
  }
  for (const auto& w : matches) {
    if (w.is_non_word()) continue;
    lat.words.push_back(w);
  }
  std::stable_sort(lat.words.begin(), lat.words.end(), [](const MatchedWord& a, const MatchedWord& b) {
    return a.head != b.head ? a.head < b.head : a.tail < b.tail;
  });
  for (const auto& w : lat.words) {
    lat.surface.push_back(w.surface);
    lat.head.push_back(w.head);
    lat.tail.push_back(w.tail);
  }
  return lat;
}

/// Geometry over padded [chars | words] slots: the first n (batch max)
/// positions hold characters, the rest words. Every valid token attends to
/// every valid token of its own sentence.
inline AttentionLayout flat_layout(std::span<const FlatLattice> lattices) {
  AttentionLayout L;
  L.batch = lattices.size();
  std::size_t n = 0, m = 0;
  for (const auto& lat : lattices) {
    n = std::max(n, lat.chars);
    m = std::max(m, lat.words.size());
  }
  const std::size_t T = n + m;
  L.queries = L.keys = T;
  L.pair_index.assign(L.batch * T * T, 0);
  L.valid.assign(L.batch * T * T, 0);
  L.query_valid.assign(L.batch * T, 0);
  PairIndexer indexer;
  for (std::size_t b = 0; b < L.batch; ++b) {
    const auto& lat = lattices[b];
    std::vector<std::size_t> slot;  // lattice token -> padded position
    for (std::size_t i = 0; i < lat.chars; ++i) slot.push_back(i);
    for (std::size_t j = 0; j < lat.words.size(); ++j) slot.push_back(n + j);
    for (std::size_t x = 0; x < lat.size(); ++x) {
      L.query_valid[b * T + slot[x]] = 1;
      for (std::size_t y = 0; y < lat.size(); ++y) {
        const std::size_t c = (b * T + slot[x]) * T + slot[y];
        L.valid[c] = 1;
        L.pair_index[c] = indexer(RelPosPair{lat.head[x] - lat.head[y], lat.tail[x] - lat.tail[y]});
      }
    }
  }
  L.pairs = indexer.pairs();
  return L;
}

/// chars [B, n, d], words [B, m, d] -> character rows [B, n, d] of one
/// lattice self-attention block. Word rows are computed and then dropped.
inline Tensor flat_forward(const Tensor& chars, const Tensor& words, const AttentionLayout& layout,
                           const EncoderBlockParams& p, const BlockOptions& opt) {
  if (chars.rank() != 3 || words.rank() != 3 || chars.dim(0) != layout.batch ||
      chars.dim(1) + words.dim(1) != layout.queries) {
    throw ShapeError("flat_forward: chars " + shape_str(chars.shape()) + ", words " + shape_str(words.shape()) +
                     " do not match layout");
  }
  const std::size_t n = chars.dim(1);
  auto x = concat_seq(chars, words);
  RelAttentionArgs args;
  args.query = matmul(x, p.w_q);
  args.key = matmul(x, p.w_k);
  args.value = matmul(x, p.w_v);
  args.rel = rel_pos_encoding(layout.pairs, p.w_r);
  args.pair_index = layout.pair_index;
  args.valid = layout.valid;
  args.u = p.u;
  args.v = p.v;
  args.heads = p.heads;
  args.dropout = opt.attn_dropout;
  args.training = opt.training;
  args.rng = opt.rng;
  args.meter = opt.meter;
  auto att = relative_attention(args);
  auto h = layer_norm(add(x, att), p.ln1_gain, p.ln1_bias);
  return slice_seq(ffn_sublayer(h, p, opt), 0, n);
}

}  // namespace nflat
