// Relative-position attention shared by the InterFormer, the context encoder
// and the flat-lattice baseline.
//
// Scores follow the Transformer-XL decomposition
//   A[s,i,j] = (q_i + u_s) . k_j + (q_i + v_s) . r_ij
// per head s, with no 1/sqrt(d) scaling. r_ij is looked up from a small table
// of distinct relative-position encodings, so an n x m x d tensor is never
// materialized.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <span>
#include <unordered_map>
#include <vector>

#include "nflat/ops.hpp"
#include "nflat/rng.hpp"
#include "nflat/tensor.hpp"

namespace nflat {

inline constexpr double kMaskFill = -1e15;

/// Sinusoidal encoding of a signed span: even dims sin(span / 10000^(2k/d)),
/// odd dims cos of the same angle.
inline std::vector<double> sinusoidal_encoding(int span, std::size_t d_model) {
  if (d_model == 0 || d_model % 2 != 0) {
    throw ContractError("sinusoidal encoding needs an even d_model, got " + std::to_string(d_model));
  }
  std::vector<double> p(d_model);
  for (std::size_t k = 0; k < d_model / 2; ++k) {
    const double angle =
        static_cast<double>(span) /
        std::pow(10000.0, static_cast<double>(2 * k) / static_cast<double>(d_model));
    p[2 * k] = std::sin(angle);
    p[2 * k + 1] = std::cos(angle);
  }
  return p;
}

/// Head and tail offsets between a query token and a key token.
struct RelPosPair {
  int head_offset = 0;
  int tail_offset = 0;
  bool operator==(const RelPosPair&) const = default;
};

/// Assigns dense rows to distinct relative-position pairs.
class PairIndexer {
 public:
  int operator()(RelPosPair p) {
    const std::int64_t key = (static_cast<std::int64_t>(p.head_offset) << 32) ^
                             static_cast<std::uint32_t>(p.tail_offset);
    auto [it, inserted] = rows_.try_emplace(key, static_cast<int>(pairs_.size()));
    if (inserted) pairs_.push_back(p);
    return it->second;
  }
  const std::vector<RelPosPair>& pairs() const { return pairs_; }

 private:
  std::unordered_map<std::int64_t, int> rows_;
  std::vector<RelPosPair> pairs_;
};

/// Constant [P x 2d] matrix of p_head (+) p_tail rows.
inline Tensor pair_encoding_matrix(std::span<const RelPosPair> pairs, std::size_t d_model) {
  std::vector<double> data;
  data.reserve(pairs.size() * 2 * d_model);
  std::unordered_map<int, std::vector<double>> cache;
  auto enc = [&](int span) -> const std::vector<double>& {
    auto it = cache.find(span);
    if (it == cache.end()) it = cache.emplace(span, sinusoidal_encoding(span, d_model)).first;
    return it->second;
  };
  for (const auto& p : pairs) {
    const auto& h = enc(p.head_offset);
    data.insert(data.end(), h.begin(), h.end());
    const auto& t = enc(p.tail_offset);
    data.insert(data.end(), t.begin(), t.end());
  }
  return Tensor::from(Shape{pairs.size(), 2 * d_model}, std::move(data));
}

/// Constant [P x d] matrix of single-offset encodings (head_offset only).
inline Tensor offset_encoding_matrix(std::span<const RelPosPair> pairs, std::size_t d_model) {
  std::vector<double> data;
  data.reserve(pairs.size() * d_model);
  for (const auto& p : pairs) {
    auto e = sinusoidal_encoding(p.head_offset, d_model);
    data.insert(data.end(), e.begin(), e.end());
  }
  return Tensor::from(Shape{pairs.size(), d_model}, std::move(data));
}

/// R = ReLU((p_head (+) p_tail) W_r) for each pair; W_r is [2d x d].
inline Tensor rel_pos_encoding(std::span<const RelPosPair> pairs, const Tensor& w_r) {
  if (w_r.rank() != 2 || w_r.dim(0) != 2 * w_r.dim(1)) {
    throw ShapeError("W_r must be [2d x d], got " + shape_str(w_r.shape()));
  }
  return relu(matmul(pair_encoding_matrix(pairs, w_r.dim(1)), w_r));
}

class AttentionBudgetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tracks live and peak bytes of attention score/weight buffers plus the
/// number of score cells computed. A non-zero `budget` caps live bytes.
struct AttentionMeter {
  std::size_t live_bytes = 0;
  std::size_t peak_bytes = 0;
  std::size_t cells = 0;
  std::size_t budget = 0;

  void allocate(std::size_t bytes) {
    if (budget && live_bytes + bytes > budget) {
      throw AttentionBudgetError("attention buffers need " + std::to_string(live_bytes + bytes) +
                                 " bytes, budget is " + std::to_string(budget));
    }
    live_bytes += bytes;
    peak_bytes = std::max(peak_bytes, live_bytes);
  }
  void release(std::size_t bytes) { live_bytes -= std::min(bytes, live_bytes); }
  void reset() {
    live_bytes = peak_bytes = cells = 0;
  }
};

/// A buffer whose size is charged to a meter for its lifetime.
class MeteredBuffer {
 public:
  MeteredBuffer(std::size_t count, AttentionMeter* meter) : meter_(meter) {
    if (meter_) meter_->allocate(count * sizeof(double));
    try {
      data_.assign(count, 0.0);
    } catch (...) {
      if (meter_) meter_->release(count * sizeof(double));
      throw;
    }
  }
  ~MeteredBuffer() {
    if (meter_) meter_->release(data_.size() * sizeof(double));
  }
  MeteredBuffer(const MeteredBuffer&) = delete;
  MeteredBuffer& operator=(const MeteredBuffer&) = delete;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::size_t size() const { return data_.size(); }

 private:
  std::vector<double> data_;
  AttentionMeter* meter_;
};

/// Softmax over one score row with invalid columns filled by kMaskFill.
/// Returns false (and zero weights) when no column is valid.
inline bool masked_softmax_row(const double* scores, const std::uint8_t* valid, double* weights,
                               std::size_t m) {
  bool any = false;
  double mx = kMaskFill;
  for (std::size_t j = 0; j < m; ++j) {
    if (valid[j]) {
      any = true;
      mx = std::max(mx, scores[j]);
    }
  }
  if (!any) {
    std::fill(weights, weights + m, 0.0);
    return false;
  }
  double z = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    const double a = valid[j] ? scores[j] : kMaskFill;
    z += (weights[j] = std::exp(a - mx));
  }
  for (std::size_t j = 0; j < m; ++j) weights[j] /= z;
  return true;
}

/// Row-wise masked softmax over a [rows x m] score block.
inline std::vector<double> masked_softmax(std::span<const double> scores,
                                          std::span<const std::uint8_t> valid, std::size_t m) {
  if (scores.size() != valid.size() || m == 0 || scores.size() % m != 0) {
    throw ShapeError("masked_softmax: scores/mask size mismatch");
  }
  std::vector<double> w(scores.size());
  for (std::size_t r = 0; r < scores.size() / m; ++r) {
    if (!masked_softmax_row(scores.data() + r * m, valid.data() + r * m, w.data() + r * m, m)) {
      throw ContractError("attention row " + std::to_string(r) + " has no valid column");
    }
  }
  return w;
}

/// Unscaled relative scores for one sentence, [heads x n x m]. `rel` is either
/// empty (content term only) or [n x m x d].
inline std::vector<double> inter_attention_scores(std::span<const double> q, std::span<const double> k,
                                                  std::span<const double> rel,
                                                  std::span<const double> u,
                                                  std::span<const double> v, std::size_t heads,
                                                  std::size_t n, std::size_t m) {
  if (heads == 0 || n == 0 || q.size() % n != 0) throw ShapeError("inter_attention_scores: bad query shape");
  const std::size_t d = q.size() / n;
  if (d % heads != 0 || k.size() != m * d || u.size() != d || (!rel.empty() && (rel.size() != n * m * d || v.size() != d))) {
    throw ShapeError("inter_attention_scores: head-dim mismatch (d=" + std::to_string(d) +
                     ", heads=" + std::to_string(heads) + ")");
  }
  const std::size_t hd = d / heads;
  std::vector<double> a(heads * n * m, 0.0);
  for (std::size_t s = 0; s < heads; ++s) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        double acc = 0.0;
        for (std::size_t t = s * hd; t < (s + 1) * hd; ++t) {
          acc += (q[i * d + t] + u[t]) * k[j * d + t];
          if (!rel.empty()) acc += (q[i * d + t] + v[t]) * rel[(i * m + j) * d + t];
        }
        a[(s * n + i) * m + j] = acc;
      }
    }
  }
  return a;
}

struct RelAttentionArgs {
  Tensor query;                          // [B, n, d]
  Tensor key;                            // [B, m, d]
  Tensor value;                          // [B, m, d]
  Tensor rel;                            // [P, d]; undefined drops the position term
  std::span<const int> pair_index;       // B*n*m rows into rel
  std::span<const std::uint8_t> valid;   // B*n*m
  Tensor u;                              // [heads, d/heads]
  Tensor v;                              // [heads, d/heads]; ignored without rel
  std::size_t heads = 1;
  double dropout = 0.0;
  bool training = false;
  Rng* rng = nullptr;
  AttentionMeter* meter = nullptr;
};

/// Multi-head masked relative attention. Rows with no valid column produce
/// zeros; callers decide whether that is padding or an error.
inline Tensor relative_attention(const RelAttentionArgs& args) {
  const auto& qs = args.query.shape();
  const auto& ks = args.key.shape();
  if (qs.size() != 3 || ks.size() != 3 || args.value.shape() != ks || qs[0] != ks[0] ||
      qs[2] != ks[2]) {
    throw ShapeError("relative_attention: query " + shape_str(qs) + " vs key/value " + shape_str(ks));
  }
  const std::size_t B = qs[0], n = qs[1], m = ks[1], d = qs[2], H = args.heads;
  if (H == 0 || d % H != 0) throw ShapeError("d_model " + std::to_string(d) + " not divisible by heads");
  const std::size_t hd = d / H;
  if (args.u.numel() != d) throw ShapeError("u must hold heads x head_dim values");
  const bool use_rel = args.rel.defined();
  if (use_rel) {
    if (args.rel.rank() != 2 || args.rel.dim(1) != d) throw ShapeError("rel table must be [P x d]");
    if (args.v.numel() != d) throw ShapeError("v must hold heads x head_dim values");
    if (args.pair_index.size() != B * n * m) throw ShapeError("pair index size mismatch");
  }
  if (args.valid.size() != B * n * m) throw ShapeError("attention mask size mismatch");
  const bool drop = args.training && args.dropout > 0.0;
  if (drop && !args.rng) throw ContractError("attention dropout requires an Rng");

  const std::size_t cells = B * H * n * m;
  if (args.meter) args.meter->cells += cells;

  const double* Q = args.query.data().data();
  const double* K = args.key.data().data();
  const double* V = args.value.data().data();
  const double* R = use_rel ? args.rel.data().data() : nullptr;
  const double* U = args.u.data().data();
  const double* Vb = use_rel ? args.v.data().data() : nullptr;

  auto weights = std::make_shared<MeteredBuffer>(cells, args.meter);
  std::vector<double> keep_scale;
  if (drop) keep_scale.resize(cells);
  std::vector<double> out(B * n * d, 0.0);
  {
    MeteredBuffer scores(cells, args.meter);
    std::vector<double> qu(hd), qv(hd);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t s = 0; s < H; ++s) {
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t row = (b * H + s) * n + i;
          const double* qi = Q + (b * n + i) * d + s * hd;
          for (std::size_t t = 0; t < hd; ++t) {
            qu[t] = qi[t] + U[s * hd + t];
            if (use_rel) qv[t] = qi[t] + Vb[s * hd + t];
          }
          double* a = scores.data() + row * m;
          const std::uint8_t* ok = args.valid.data() + (b * n + i) * m;
          for (std::size_t j = 0; j < m; ++j) {
            if (!ok[j]) continue;
            const double* kj = K + (b * m + j) * d + s * hd;
            double acc = 0.0;
            for (std::size_t t = 0; t < hd; ++t) acc += qu[t] * kj[t];
            if (use_rel) {
              const double* r = R + static_cast<std::size_t>(args.pair_index[(b * n + i) * m + j]) * d + s * hd;
              for (std::size_t t = 0; t < hd; ++t) acc += qv[t] * r[t];
            }
            a[j] = acc;
          }
          double* w = weights->data() + row * m;
          if (!masked_softmax_row(a, ok, w, m)) continue;
          double* o = out.data() + (b * n + i) * d + s * hd;
          for (std::size_t j = 0; j < m; ++j) {
            double wj = w[j];
            if (drop) {
              keep_scale[row * m + j] = args.rng->bernoulli(1.0 - args.dropout) ? 1.0 / (1.0 - args.dropout) : 0.0;
              wj *= keep_scale[row * m + j];
            }
            if (wj == 0.0) continue;
            const double* vj = V + (b * m + j) * d + s * hd;
            for (std::size_t t = 0; t < hd; ++t) o[t] += wj * vj[t];
          }
        }
      }
    }
  }

  std::vector<Tensor> inputs{args.query, args.key, args.value, args.u};
  if (use_rel) {
    inputs.push_back(args.rel);
    inputs.push_back(args.v);
  }
  std::vector<int> pair_index;
  std::vector<std::uint8_t> valid(args.valid.begin(), args.valid.end());
  if (use_rel) pair_index.assign(args.pair_index.begin(), args.pair_index.end());

  auto backward = [B, n, m, d, H, hd, use_rel, weights, keep_scale = std::move(keep_scale),
                   pair_index = std::move(pair_index), valid = std::move(valid)](Node& self) {
    Node& Qn = *self.inputs[0];
    Node& Kn = *self.inputs[1];
    Node& Vn = *self.inputs[2];
    Node& Un = *self.inputs[3];
    Node* Rn = use_rel ? self.inputs[4].get() : nullptr;
    Node* VBn = use_rel ? self.inputs[5].get() : nullptr;
    const double* Q = Qn.value.data();
    const double* K = Kn.value.data();
    const double* V = Vn.value.data();
    const double* U = Un.value.data();
    const double* R = use_rel ? Rn->value.data() : nullptr;
    const double* VB = use_rel ? VBn->value.data() : nullptr;
    double* gQ = Qn.requires_grad ? Qn.ensure_grad().data() : nullptr;
    double* gK = Kn.requires_grad ? Kn.ensure_grad().data() : nullptr;
    double* gV = Vn.requires_grad ? Vn.ensure_grad().data() : nullptr;
    double* gU = Un.requires_grad ? Un.ensure_grad().data() : nullptr;
    double* gR = (use_rel && Rn->requires_grad) ? Rn->ensure_grad().data() : nullptr;
    double* gVB = (use_rel && VBn->requires_grad) ? VBn->ensure_grad().data() : nullptr;
    const double* G = self.grad.data();
    const bool drop = !keep_scale.empty();

    std::vector<double> dw(m), da(m);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t s = 0; s < H; ++s) {
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t row = (b * H + s) * n + i;
          const double* w = weights->data() + row * m;
          const double* g = G + (b * n + i) * d + s * hd;
          const std::uint8_t* ok = valid.data() + (b * n + i) * m;
          double dot = 0.0;
          bool any = false;
          for (std::size_t j = 0; j < m; ++j) {
            dw[j] = 0.0;
            if (!ok[j]) continue;
            any = true;
            const double ks = drop ? keep_scale[row * m + j] : 1.0;
            const double* vj = V + (b * m + j) * d + s * hd;
            double acc = 0.0;
            for (std::size_t t = 0; t < hd; ++t) acc += g[t] * vj[t];
            dw[j] = acc * ks;
            dot += w[j] * dw[j];
            if (gV && ks != 0.0) {
              double* gvj = gV + (b * m + j) * d + s * hd;
              const double wk = w[j] * ks;
              for (std::size_t t = 0; t < hd; ++t) gvj[t] += wk * g[t];
            }
          }
          if (!any) continue;
          const double* qi = Q + (b * n + i) * d + s * hd;
          double* gqi = gQ ? gQ + (b * n + i) * d + s * hd : nullptr;
          for (std::size_t j = 0; j < m; ++j) {
            if (!ok[j]) continue;
            const double dA = w[j] * (dw[j] - dot);
            if (dA == 0.0) continue;
            const double* kj = K + (b * m + j) * d + s * hd;
            const double* r =
                use_rel ? R + static_cast<std::size_t>(pair_index[(b * n + i) * m + j]) * d + s * hd : nullptr;
            for (std::size_t t = 0; t < hd; ++t) {
              if (gqi) gqi[t] += dA * (kj[t] + (use_rel ? r[t] : 0.0));
              if (gU) gU[s * hd + t] += dA * kj[t];
              if (gK) gK[(b * m + j) * d + s * hd + t] += dA * (qi[t] + U[s * hd + t]);
              if (use_rel) {
                if (gVB) gVB[s * hd + t] += dA * r[t];
                if (gR)
                  gR[static_cast<std::size_t>(pair_index[(b * n + i) * m + j]) * d + s * hd + t] +=
                      dA * (qi[t] + VB[s * hd + t]);
              }
            }
          }
        }
      }
    }
  };
  return make_result(Shape{B, n, d}, std::move(out), std::move(inputs), std::move(backward));
}

}  // namespace nflat
