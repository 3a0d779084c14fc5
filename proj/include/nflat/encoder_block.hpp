// Parameters and sublayers common to both attention encoders.
#pragma once

#include <string>
#include <vector>

#include "nflat/attention.hpp"
#include "nflat/ops.hpp"
#include "nflat/params.hpp"

namespace nflat {

enum class Ablation { None, NoRpe, NoTag };

inline std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::NoRpe:
      return "-RPE";
    case Ablation::NoTag:
      return "-TAG";
    default:
      return "none";
  }
}

/// Attention + FFN block weights. `w_r` is [2d x d] for two-offset encodings
/// (InterFormer, flat lattice) and [d x d] for single-offset self-attention.
struct EncoderBlockParams {
  Tensor w_q, w_k, w_v, w_r;
  Tensor u, v;
  Tensor w_1, b_1, w_2, b_2;
  Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  std::size_t heads = 1;

  std::size_t d_model() const { return w_q.dim(0); }
  std::size_t head_dim() const { return d_model() / heads; }

  static EncoderBlockParams create(ParamStore& store, const std::string& prefix, std::size_t d_model,
                                   std::size_t heads, std::size_t d_ff, bool two_offsets, Rng& rng) {
    if (heads == 0 || d_model % heads != 0) {
      throw ContractError("d_model " + std::to_string(d_model) + " is not divisible by " +
                          std::to_string(heads) + " heads");
    }
    if (d_model % 2 != 0) throw ContractError("d_model must be even for sinusoidal encodings");
    const std::size_t hd = d_model / heads;
    EncoderBlockParams p;
    p.heads = heads;
    p.w_q = store.add(prefix + ".w_q", {d_model, d_model}, Init::Xavier, rng);
    p.w_k = store.add(prefix + ".w_k", {d_model, d_model}, Init::Xavier, rng);
    p.w_v = store.add(prefix + ".w_v", {d_model, d_model}, Init::Xavier, rng);
    p.w_r = store.add(prefix + ".w_r", {two_offsets ? 2 * d_model : d_model, d_model}, Init::Xavier, rng);
    p.u = store.add(prefix + ".u", {heads, hd}, Init::Normal, rng);
    p.v = store.add(prefix + ".v", {heads, hd}, Init::Normal, rng);
    p.w_1 = store.add(prefix + ".w_1", {d_model, d_ff}, Init::Xavier, rng);
    p.b_1 = store.add(prefix + ".b_1", {d_ff}, Init::Zeros, rng);
    p.w_2 = store.add(prefix + ".w_2", {d_ff, d_model}, Init::Xavier, rng);
    p.b_2 = store.add(prefix + ".b_2", {d_model}, Init::Zeros, rng);
    p.ln1_gain = store.add(prefix + ".ln1_gain", {d_model}, Init::Ones, rng);
    p.ln1_bias = store.add(prefix + ".ln1_bias", {d_model}, Init::Zeros, rng);
    p.ln2_gain = store.add(prefix + ".ln2_gain", {d_model}, Init::Ones, rng);
    p.ln2_bias = store.add(prefix + ".ln2_bias", {d_model}, Init::Zeros, rng);
    return p;
  }

  static EncoderBlockParams bind(const ParamStore& store, const std::string& prefix, std::size_t heads) {
    EncoderBlockParams p;
    p.heads = heads;
    p.w_q = store.get(prefix + ".w_q");
    p.w_k = store.get(prefix + ".w_k");
    p.w_v = store.get(prefix + ".w_v");
    p.w_r = store.get(prefix + ".w_r");
    p.u = store.get(prefix + ".u");
    p.v = store.get(prefix + ".v");
    p.w_1 = store.get(prefix + ".w_1");
    p.b_1 = store.get(prefix + ".b_1");
    p.w_2 = store.get(prefix + ".w_2");
    p.b_2 = store.get(prefix + ".b_2");
    p.ln1_gain = store.get(prefix + ".ln1_gain");
    p.ln1_bias = store.get(prefix + ".ln1_bias");
    p.ln2_gain = store.get(prefix + ".ln2_gain");
    p.ln2_bias = store.get(prefix + ".ln2_bias");
    return p;
  }
};

/// Precomputed attention geometry for a padded batch: which (query, key)
/// cells are valid and which relative-position pair each cell uses.
struct AttentionLayout {
  std::size_t batch = 0;
  std::size_t queries = 0;
  std::size_t keys = 0;
  std::vector<RelPosPair> pairs;
  std::vector<int> pair_index;          // batch * queries * keys
  std::vector<std::uint8_t> valid;      // batch * queries * keys
  std::vector<std::uint8_t> query_valid;  // batch * queries
};

struct BlockOptions {
  double attn_dropout = 0.0;
  double fc_dropout = 0.0;
  bool training = false;
  Rng* rng = nullptr;
  AttentionMeter* meter = nullptr;
};

/// LayerNorm(h + FFN(h)), FFN(x) = max(0, x W1 + b1) W2 + b2 with dropout
/// after each fully-connected layer.
inline Tensor ffn_sublayer(const Tensor& h, const EncoderBlockParams& p, const BlockOptions& opt) {
  if (opt.training && opt.fc_dropout > 0.0 && !opt.rng) throw ContractError("FFN dropout requires an Rng");
  Rng unused(0);
  Rng& rng = opt.rng ? *opt.rng : unused;
  auto hidden = dropout(relu(linear(h, p.w_1, p.b_1)), opt.fc_dropout, opt.training, rng);
  auto ffn = dropout(linear(hidden, p.w_2, p.b_2), opt.fc_dropout, opt.training, rng);
  return layer_norm(add(h, ffn), p.ln2_gain, p.ln2_bias);
}

}  // namespace nflat
