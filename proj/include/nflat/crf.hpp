// Linear-chain CRF: log-likelihood by the forward algorithm, gradients from
// forward-backward marginals, MAP decoding by Viterbi. Always 64-bit.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "nflat/errors.hpp"
#include "nflat/ops.hpp"
#include "nflat/params.hpp"
#include "nflat/tensor.hpp"

namespace nflat {

enum class TagScheme { BMES, BIO };

inline std::string to_string(TagScheme s) { return s == TagScheme::BMES ? "BMES" : "BIO"; }

/// Dense label indices for a tag set.
class LabelSchema {
 public:
  LabelSchema() = default;
  LabelSchema(TagScheme scheme, std::vector<std::string> labels) : scheme_(scheme), labels_(std::move(labels)) {
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      if (!index_.emplace(labels_[i], static_cast<int>(i)).second)
        throw DataError("duplicate label " + labels_[i]);
    }
  }

  /// Collects the tags of a corpus; "O" (if present) gets index 0, the rest
  /// follow in lexicographic order. BMES is chosen when any M-/E-/S- tag occurs.
  static LabelSchema from_tags(const std::vector<std::vector<std::string>>& tag_seqs) {
    std::set<std::string> seen;
    for (const auto& seq : tag_seqs) seen.insert(seq.begin(), seq.end());
    TagScheme scheme = TagScheme::BIO;
    std::vector<std::string> labels;
    if (seen.erase("O")) labels.push_back("O");
    for (const auto& t : seen) {
      if (t.size() >= 2 && t[1] == '-' && (t[0] == 'M' || t[0] == 'E' || t[0] == 'S')) scheme = TagScheme::BMES;
      labels.push_back(t);
    }
    return LabelSchema(scheme, std::move(labels));
  }

  int index_of(const std::string& tag) const {
    auto it = index_.find(tag);
    if (it == index_.end()) throw DataError("unknown tag '" + tag + "'");
    return it->second;
  }
  const std::string& label(int i) const { return labels_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return labels_.size(); }
  TagScheme scheme() const { return scheme_; }
  const std::vector<std::string>& labels() const { return labels_; }

 private:
  TagScheme scheme_ = TagScheme::BIO;
  std::vector<std::string> labels_;
  std::map<std::string, int> index_;
};

/// transitions[prev, next], start[L], end[L].
struct CrfParams {
  Tensor transitions, start, end;

  std::size_t labels() const { return start.numel(); }

  static CrfParams create(ParamStore& store, const std::string& prefix, std::size_t labels, Rng& rng) {
    CrfParams p;
    p.transitions = store.add(prefix + ".transitions", {labels, labels}, Init::Zeros, rng);
    p.start = store.add(prefix + ".start", {labels}, Init::Zeros, rng);
    p.end = store.add(prefix + ".end", {labels}, Init::Zeros, rng);
    return p;
  }
  static CrfParams bind(const ParamStore& store, const std::string& prefix) {
    return CrfParams{store.get(prefix + ".transitions"), store.get(prefix + ".start"), store.get(prefix + ".end")};
  }
};

namespace detail {

inline double log_sum_exp(const double* x, std::size_t n) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, x[i]);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(x[i] - mx);
  return mx + std::log(s);
}

// Forward (alpha, emission included) and backward (beta, emission excluded)
// tables in log-space; returns log Z.
inline double crf_forward_backward(const double* em, std::size_t n, std::size_t L, const double* T,
                                   const double* start, const double* end, std::vector<double>& alpha,
                                   std::vector<double>& beta) {
  alpha.assign(n * L, 0.0);
  beta.assign(n * L, 0.0);
  std::vector<double> tmp(L);
  for (std::size_t y = 0; y < L; ++y) alpha[y] = start[y] + em[y];
  for (std::size_t t = 1; t < n; ++t) {
    for (std::size_t y = 0; y < L; ++y) {
      for (std::size_t p = 0; p < L; ++p) tmp[p] = alpha[(t - 1) * L + p] + T[p * L + y];
      alpha[t * L + y] = log_sum_exp(tmp.data(), L) + em[t * L + y];
    }
  }
  for (std::size_t y = 0; y < L; ++y) beta[(n - 1) * L + y] = end[y];
  for (std::size_t t = n - 1; t-- > 0;) {
    for (std::size_t y = 0; y < L; ++y) {
      for (std::size_t nx = 0; nx < L; ++nx) tmp[nx] = T[y * L + nx] + em[(t + 1) * L + nx] + beta[(t + 1) * L + nx];
      beta[t * L + y] = log_sum_exp(tmp.data(), L);
    }
  }
  for (std::size_t y = 0; y < L; ++y) tmp[y] = alpha[(n - 1) * L + y] + end[y];
  return log_sum_exp(tmp.data(), L);
}

}  // namespace detail

/// Unnormalized score of one label path.
inline double crf_path_score(std::span<const double> emissions, std::size_t L, std::span<const int> path,
                             const CrfParams& p) {
  const auto T = p.transitions.data();
  double s = p.start.data()[static_cast<std::size_t>(path[0])] + p.end.data()[static_cast<std::size_t>(path.back())];
  for (std::size_t t = 0; t < path.size(); ++t) {
    s += emissions[t * L + static_cast<std::size_t>(path[t])];
    if (t > 0) s += T[static_cast<std::size_t>(path[t - 1]) * L + static_cast<std::size_t>(path[t])];
  }
  return s;
}

inline double crf_log_partition(std::span<const double> emissions, std::size_t L, const CrfParams& p) {
  if (L == 0 || emissions.empty() || emissions.size() % L != 0) throw ShapeError("crf: emissions not [n x L]");
  std::vector<double> alpha, beta;
  return detail::crf_forward_backward(emissions.data(), emissions.size() / L, L, p.transitions.data().data(),
                                      p.start.data().data(), p.end.data().data(), alpha, beta);
}

/// Summed negative log-likelihood of a padded batch. emissions [B, n, L];
/// sentence b uses its first lengths[b] rows.
inline Tensor crf_batch_nll(const Tensor& emissions, std::span<const std::size_t> lengths,
                            std::span<const std::vector<int>> gold, const CrfParams& p) {
  const std::size_t L = p.labels();
  if (emissions.rank() != 3 || emissions.dim(2) != L || emissions.dim(0) != lengths.size() ||
      gold.size() != lengths.size()) {
    throw ShapeError("crf_batch_nll: emissions " + shape_str(emissions.shape()) + " vs " +
                     std::to_string(lengths.size()) + " sentences, " + std::to_string(L) + " labels");
  }
  const std::size_t B = lengths.size(), N = emissions.dim(1);
  const double* E = emissions.data().data();
  const double* T = p.transitions.data().data();
  const double* S = p.start.data().data();
  const double* F = p.end.data().data();

  // d(NLL)/d(emission) per cell, and per-parameter gradients, computed eagerly.
  std::vector<double> g_em(B * N * L, 0.0), g_T(L * L, 0.0), g_S(L, 0.0), g_F(L, 0.0);
  double total = 0.0;
  std::vector<double> alpha, beta;
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t n = lengths[b];
    if (n == 0 || n > N) throw ShapeError("crf_batch_nll: bad sentence length");
    if (gold[b].size() != n) throw ShapeError("crf_batch_nll: gold length differs from sentence length");
    for (int y : gold[b]) {
      if (y < 0 || static_cast<std::size_t>(y) >= L) throw DataError("gold label index " + std::to_string(y) + " out of range");
    }
    const double* em = E + b * N * L;
    const double logz = detail::crf_forward_backward(em, n, L, T, S, F, alpha, beta);
    std::span<const double> ems(em, n * L);
    total += logz - crf_path_score(ems, L, gold[b], p);

    double* ge = g_em.data() + b * N * L;
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t y = 0; y < L; ++y) ge[t * L + y] = std::exp(alpha[t * L + y] + beta[t * L + y] - logz);
    for (std::size_t y = 0; y < L; ++y) {
      g_S[y] += ge[y];
      g_F[y] += ge[(n - 1) * L + y];
    }
    for (std::size_t t = 1; t < n; ++t)
      for (std::size_t a = 0; a < L; ++a)
        for (std::size_t c = 0; c < L; ++c)
          g_T[a * L + c] += std::exp(alpha[(t - 1) * L + a] + T[a * L + c] + em[t * L + c] + beta[t * L + c] - logz);
    const auto& gp = gold[b];
    g_S[static_cast<std::size_t>(gp[0])] -= 1.0;
    g_F[static_cast<std::size_t>(gp[n - 1])] -= 1.0;
    for (std::size_t t = 0; t < n; ++t) {
      ge[t * L + static_cast<std::size_t>(gp[t])] -= 1.0;
      if (t > 0) g_T[static_cast<std::size_t>(gp[t - 1]) * L + static_cast<std::size_t>(gp[t])] -= 1.0;
    }
  }

  return make_result(Shape{}, {total}, {emissions, p.transitions, p.start, p.end},
                     [g_em = std::move(g_em), g_T = std::move(g_T), g_S = std::move(g_S),
                      g_F = std::move(g_F)](Node& self) {
                       const double g = self.grad[0];
                       auto acc = [g](Node& n, const std::vector<double>& src) {
                         if (!n.requires_grad) return;
                         auto& dst = n.ensure_grad();
                         for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g * src[i];
                       };
                       acc(*self.inputs[0], g_em);
                       acc(*self.inputs[1], g_T);
                       acc(*self.inputs[2], g_S);
                       acc(*self.inputs[3], g_F);
                     });
}

/// log p(gold | emissions) for one sentence; emissions [n x L].
inline Tensor crf_log_likelihood(const Tensor& emissions, std::span<const int> gold, const CrfParams& p) {
  if (emissions.rank() != 2) throw ShapeError("crf_log_likelihood: emissions must be [n x L]");
  const std::size_t n = emissions.dim(0);
  const std::vector<std::size_t> lengths{n};
  const std::vector<std::vector<int>> golds{std::vector<int>(gold.begin(), gold.end())};
  auto batched = reshape(emissions, Shape{1, n, emissions.dim(1)});
  return scale(crf_batch_nll(batched, lengths, golds, p), -1.0);
}

/// Highest-scoring path; ties resolve toward the lower label index.
inline std::vector<int> viterbi_decode(std::span<const double> emissions, std::size_t L, const CrfParams& p) {
  if (L == 0 || emissions.empty() || emissions.size() % L != 0) throw ShapeError("viterbi: emissions not [n x L]");
  const std::size_t n = emissions.size() / L;
  const auto T = p.transitions.data();
  const auto S = p.start.data();
  const auto F = p.end.data();
  std::vector<double> score(L), next(L);
  std::vector<int> back(n * L, 0);
  for (std::size_t y = 0; y < L; ++y) score[y] = S[y] + emissions[y];
  for (std::size_t t = 1; t < n; ++t) {
    for (std::size_t y = 0; y < L; ++y) {
      int best = 0;
      double best_s = score[0] + T[y];
      for (std::size_t a = 1; a < L; ++a) {
        const double s = score[a] + T[a * L + y];
        if (s > best_s) {
          best_s = s;
          best = static_cast<int>(a);
        }
      }
      next[y] = best_s + emissions[t * L + y];
      back[t * L + y] = best;
    }
    std::swap(score, next);
  }
  int last = 0;
  double best_s = score[0] + F[0];
  for (std::size_t y = 1; y < L; ++y) {
    if (score[y] + F[y] > best_s) {
      best_s = score[y] + F[y];
      last = static_cast<int>(y);
    }
  }
  std::vector<int> path(n);
  path[n - 1] = last;
  for (std::size_t t = n - 1; t > 0; --t) path[t - 1] = back[t * L + static_cast<std::size_t>(path[t])];
  return path;
}

}  // namespace nflat
