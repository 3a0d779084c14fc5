// Single-layer character self-attention with direction-aware relative
// positions:
//   score(i,j) = (q_i + u')^T k_j + (q_i + v')^T r_{i-j},  r_t = p_t W_r
// where p_t is the sinusoidal encoding of the signed offset t. No scaling.
#pragma once

#include <span>
#include <vector>

#include "nflat/attention.hpp"
#include "nflat/encoder_block.hpp"

namespace nflat {

using SelfAttnParams = EncoderBlockParams;

inline AttentionLayout self_layout(std::span<const std::size_t> lengths) {
  AttentionLayout L;
  L.batch = lengths.size();
  for (auto len : lengths) L.queries = std::max(L.queries, len);
  L.keys = L.queries;
  const std::size_t n = L.queries;
  L.pair_index.assign(L.batch * n * n, 0);
  L.valid.assign(L.batch * n * n, 0);
  L.query_valid.assign(L.batch * n, 0);
  PairIndexer indexer;
  for (std::size_t b = 0; b < L.batch; ++b) {
    for (std::size_t i = 0; i < lengths[b]; ++i) {
      L.query_valid[b * n + i] = 1;
      for (std::size_t j = 0; j < lengths[b]; ++j) {
        const std::size_t c = (b * n + i) * n + j;
        L.valid[c] = 1;
        L.pair_index[c] = indexer(RelPosPair{static_cast<int>(i) - static_cast<int>(j), 0});
      }
    }
  }
  L.pairs = indexer.pairs();
  return L;
}

/// Projected single-offset encodings r_t for every offset in the layout.
inline Tensor self_rel_encoding(std::span<const RelPosPair> offsets, const Tensor& w_r) {
  if (w_r.rank() != 2 || w_r.dim(0) != w_r.dim(1)) {
    throw ShapeError("self-attention W_r must be [d x d], got " + shape_str(w_r.shape()));
  }
  return matmul(offset_encoding_matrix(offsets, w_r.dim(1)), w_r);
}

/// h [B, n, d] -> context states [B, n, d].
inline Tensor self_attention_forward(const Tensor& h, const AttentionLayout& layout, const SelfAttnParams& p,
                                     const BlockOptions& opt) {
  if (h.rank() != 3 || h.dim(0) != layout.batch || h.dim(1) != layout.queries || h.dim(2) != p.d_model()) {
    throw ShapeError("self_attention_forward: input " + shape_str(h.shape()) + " does not match layout");
  }
  if (layout.queries == 0) throw ContractError("self_attention_forward: empty sentence");
  RelAttentionArgs args;
  args.query = matmul(h, p.w_q);
  args.key = matmul(h, p.w_k);
  args.value = matmul(h, p.w_v);
  args.rel = self_rel_encoding(layout.pairs, p.w_r);
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
  auto x = layer_norm(add(h, att), p.ln1_gain, p.ln1_bias);
  return ffn_sublayer(x, p, opt);
}

}  // namespace nflat
