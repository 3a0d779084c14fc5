// InterFormer: characters attend to matched words (never the reverse), with
// head/tail relative offsets between each character and each word.
#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include "nflat/attention.hpp"
#include "nflat/encoder_block.hpp"
#include "nflat/lexicon.hpp"

namespace nflat {

using InterFormerParams = EncoderBlockParams;

/// Offsets between character at 1-based position `pos` and a word.
inline RelPosPair char_word_offsets(int pos, const MatchedWord& w) {
  return RelPosPair{pos - w.head, pos - w.tail};
}

/// Builds the padded n x m' geometry for a batch. `words[b]` is the word
/// sequence of sentence b, <non_word> included when enabled.
inline AttentionLayout inter_layout(std::span<const std::size_t> lengths,
                                    std::span<const std::vector<MatchedWord>> words) {
  if (lengths.size() != words.size()) throw ShapeError("inter_layout: batch size mismatch");
  AttentionLayout L;
  L.batch = lengths.size();
  for (std::size_t b = 0; b < L.batch; ++b) {
    L.queries = std::max(L.queries, lengths[b]);
    L.keys = std::max(L.keys, words[b].size());
  }
  L.keys = std::max<std::size_t>(L.keys, 1);
  const std::size_t cells = L.batch * L.queries * L.keys;
  L.pair_index.assign(cells, 0);
  L.valid.assign(cells, 0);
  L.query_valid.assign(L.batch * L.queries, 0);
  PairIndexer indexer;
  indexer(RelPosPair{0, 0});
  for (std::size_t b = 0; b < L.batch; ++b) {
    for (std::size_t i = 0; i < lengths[b]; ++i) {
      L.query_valid[b * L.queries + i] = 1;
      for (std::size_t j = 0; j < words[b].size(); ++j) {
        const std::size_t c = (b * L.queries + i) * L.keys + j;
        L.valid[c] = 1;
        L.pair_index[c] = indexer(char_word_offsets(static_cast<int>(i) + 1, words[b][j]));
      }
    }
  }
  L.pairs = indexer.pairs();
  return L;
}

struct InterFormerOptions {
  Ablation ablation = Ablation::None;
  /// Under -TAG, a character with no matched word copies its own input row
  /// instead of raising.
  bool tag_fallback = false;
  BlockOptions block;
};

class DegenerateRowError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// chars [B, n, d], words [B, m', d] -> fused character states [B, n, d].
inline Tensor interformer_forward(const Tensor& chars, const Tensor& words, const AttentionLayout& layout,
                                  const InterFormerParams& p, const InterFormerOptions& opt) {
  const std::size_t d = p.d_model();
  if (chars.rank() != 3 || words.rank() != 3 || chars.dim(2) != d || words.dim(2) != d ||
      chars.dim(0) != layout.batch || words.dim(0) != layout.batch || chars.dim(1) != layout.queries ||
      words.dim(1) != layout.keys) {
    throw ShapeError("interformer_forward: chars " + shape_str(chars.shape()) + ", words " +
                     shape_str(words.shape()) + " do not match layout");
  }
  const std::size_t B = layout.batch, n = layout.queries, m = layout.keys;

  std::vector<std::uint8_t> degenerate(B * n, 0);
  bool any_degenerate = false;
  for (std::size_t r = 0; r < B * n; ++r) {
    if (!layout.query_valid[r]) continue;
    const auto* row = layout.valid.data() + r * m;
    if (std::none_of(row, row + m, [](std::uint8_t x) { return x != 0; })) {
      degenerate[r] = 1;
      any_degenerate = true;
    }
  }
  if (any_degenerate && !opt.tag_fallback) {
    throw DegenerateRowError("a character has no word to attend to (enable tag_fallback or keep <non_word>)");
  }

  auto q = matmul(chars, p.w_q);
  auto k = matmul(words, p.w_k);
  auto v = matmul(words, p.w_v);
  RelAttentionArgs args;
  args.query = q;
  args.key = k;
  args.value = v;
  if (opt.ablation != Ablation::NoRpe) {
    args.rel = rel_pos_encoding(layout.pairs, p.w_r);
    args.v = p.v;
    args.pair_index = layout.pair_index;
  }
  args.valid = layout.valid;
  args.u = p.u;
  args.heads = p.heads;
  args.dropout = opt.block.attn_dropout;
  args.training = opt.block.training;
  args.rng = opt.block.rng;
  args.meter = opt.block.meter;
  auto att = relative_attention(args);

  if (any_degenerate) {
    std::vector<double> copy_mask(B * n * d, 0.0);
    for (std::size_t r = 0; r < B * n; ++r)
      if (degenerate[r]) std::fill_n(copy_mask.begin() + static_cast<std::ptrdiff_t>(r * d), d, 1.0);
    att = add(att, mul(chars, Tensor::from(Shape{B, n, d}, std::move(copy_mask))));
  }

  auto h = layer_norm(add(chars, att), p.ln1_gain, p.ln1_bias);
  return ffn_sublayer(h, p, opt.block);
}

}  // namespace nflat
