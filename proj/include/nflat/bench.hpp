// Attention cost sweep: NFLAT (inter-attention + self-attention) against the
// flat-lattice baseline on synthetic sentences of fixed length.
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "nflat/attention.hpp"
#include "nflat/context_encoder.hpp"
#include "nflat/flat.hpp"
#include "nflat/interformer.hpp"
#include "nflat/params.hpp"

namespace nflat {

struct BenchOptions {
  std::vector<std::size_t> lengths{16, 32, 64, 128, 256, 512, 1024};
  double density = 0.4;
  std::size_t reps = 20;  // sentences timed per (model, length)
  std::size_t warmup = 1;
  std::size_t d_model = 64;
  std::size_t heads = 8;
  std::uint64_t seed = 1;
  std::size_t budget_bytes = 0;  // 0: no cap on live attention bytes
};

struct BenchRecord {
  std::string model;
  std::size_t length = 0;
  std::size_t m = 0;  // matched words, <non_word> excluded
  std::size_t cells = 0;
  std::size_t peak_bytes = 0;
  double sec_per_1k = 0.0;
  std::string status = "ok";
};

/// heads * (n * m' + n^2) with m' = m + 1.
inline std::size_t nflat_cells(std::size_t heads, std::size_t n, std::size_t m) {
  return heads * (n * (m + 1) + n * n);
}

inline std::size_t flat_cells(std::size_t heads, std::size_t n, std::size_t m) {
  return heads * (n + m) * (n + m);
}

/// `m` distinct random spans of 2 to 4 characters inside a sentence of
/// length n, sorted by (head, tail). Word ids index a random table.
inline std::vector<MatchedWord> bench_matches(std::size_t n, std::size_t m, Rng& rng) {
  std::set<std::pair<int, int>> spans;
  std::size_t max_spans = 0;
  for (std::size_t len = 2; len <= 4 && len <= n; ++len) max_spans += n - len + 1;
  m = std::min(m, max_spans);
  while (spans.size() < m) {
    const auto len = static_cast<int>(rng.integer(2, std::min<std::int64_t>(4, static_cast<std::int64_t>(n))));
    const auto head = static_cast<int>(rng.integer(1, static_cast<std::int64_t>(n) - len + 1));
    spans.emplace(head, head + len - 1);
  }
  std::vector<MatchedWord> out;
  int id = 0;
  for (const auto& [h, t] : spans) out.push_back(MatchedWord{id++, std::u32string(static_cast<std::size_t>(t - h + 1), U'x'), h, t});
  return out;
}

namespace detail {

struct BenchModels {
  ParamStore store;
  EncoderBlockParams inter, self, flat;
};

inline BenchModels bench_models(const BenchOptions& opt, Rng& rng) {
  BenchModels b;
  const std::size_t d = opt.d_model, ff = 2 * d;
  b.inter = EncoderBlockParams::create(b.store, "inter", d, opt.heads, ff, true, rng);
  b.self = EncoderBlockParams::create(b.store, "self", d, opt.heads, ff, false, rng);
  b.flat = EncoderBlockParams::create(b.store, "flat", d, opt.heads, ff, true, rng);
  return b;
}

inline Tensor random_states(std::size_t rows, std::size_t d, Rng& rng) {
  std::vector<double> v(rows * d);
  for (auto& x : v) x = rng.normal(0.0, 1.0);
  return Tensor::from(Shape{1, rows, d}, std::move(v));
}

}  // namespace detail

/// One forward pass (layout construction included) of either model on one
/// sentence. Runs without gradient tracking, so attention weights are freed
/// as soon as each layer finishes.
inline Tensor bench_forward(bool flat, const detail::BenchModels& models, const Tensor& chars,
                            const std::vector<MatchedWord>& matches, AttentionMeter* meter) {
  NoGradGuard guard;
  const std::size_t n = chars.dim(1), d = chars.dim(2);
  Rng word_rng(matches.size(), "bench-words");
  BlockOptions block{0.0, 0.0, false, nullptr, meter};
  if (flat) {
    std::u32string text(n, U'x');
    const FlatLattice lat = build_flat_lattice(text, matches);
    const auto layout = flat_layout(std::span<const FlatLattice>(&lat, 1));
    const auto words = detail::random_states(lat.words.size(), d, word_rng);
    return flat_forward(chars, words, layout, models.flat, block);
  }
  const std::vector<std::size_t> lengths{n};
  const std::vector<std::vector<MatchedWord>> words{append_non_word(matches, n)};
  const auto inter = inter_layout(lengths, words);
  const auto w = detail::random_states(words[0].size(), d, word_rng);
  auto h = interformer_forward(chars, w, inter, models.inter, InterFormerOptions{Ablation::None, false, block});
  const auto self = self_layout(lengths);
  return self_attention_forward(h, self, models.self, block);
}

/// Sweeps every length for both models. A model that fails at a length
/// (for example by exceeding the byte budget) gets a failure row and the
/// sweep continues.
inline std::vector<BenchRecord> run_bench(const BenchOptions& opt) {
  if (!(opt.density >= 0.0)) throw ContractError("match density must be non-negative");
  if (opt.reps == 0) throw ContractError("bench needs at least one rep");
  Rng rng(opt.seed, "bench");
  const auto models = detail::bench_models(opt, rng);
  std::vector<BenchRecord> out;
  for (std::size_t n : opt.lengths) {
    if (n == 0) throw ContractError("bench length must be positive");
    const auto m_target = static_cast<std::size_t>(std::llround(opt.density * static_cast<double>(n)));
    std::vector<Tensor> chars;
    std::vector<std::vector<MatchedWord>> matches;
    for (std::size_t r = 0; r < opt.reps + opt.warmup; ++r) {
      chars.push_back(detail::random_states(n, opt.d_model, rng));
      matches.push_back(bench_matches(n, m_target, rng));
    }
    for (bool flat : {false, true}) {
      BenchRecord rec;
      rec.model = flat ? "FLAT" : "NFLAT";
      rec.length = n;
      rec.m = matches.front().size();
      AttentionMeter meter;
      meter.budget = opt.budget_bytes;
      try {
        for (std::size_t r = 0; r < opt.warmup; ++r) bench_forward(flat, models, chars[r], matches[r], &meter);
        meter.reset();
        // Counts come from the first timed sentence; every sentence of a
        // length has the same m.
        double seconds = 0.0;
        for (std::size_t r = opt.warmup; r < chars.size(); ++r) {
          AttentionMeter scratch;
          scratch.budget = opt.budget_bytes;
          const auto t0 = std::chrono::steady_clock::now();
          bench_forward(flat, models, chars[r], matches[r], r == opt.warmup ? &meter : &scratch);
          seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        }
        rec.cells = meter.cells;
        rec.peak_bytes = meter.peak_bytes;
        rec.sec_per_1k = 1000.0 * seconds / static_cast<double>(opt.reps);
      } catch (const AttentionBudgetError&) {
        rec.status = "failed: over budget";
      } catch (const std::bad_alloc&) {
        rec.status = "failed: out of memory";
      }
      out.push_back(rec);
    }
  }
  return out;
}

inline void write_bench_csv(std::ostream& out, const std::vector<BenchRecord>& rows, const BenchOptions& opt) {
  out << "model,length,m,cells,peak_bytes,sec_per_1k,status\n";
  for (const auto& r : rows) {
    out << r.model << ',' << r.length << ',' << r.m << ',' << r.cells << ',' << r.peak_bytes << ',' << r.sec_per_1k
        << ',' << r.status << '\n';
  }
  out << "# reps=" << opt.reps << " warmup=" << opt.warmup << " density=" << opt.density << " d_model=" << opt.d_model
      << " heads=" << opt.heads << " seed=" << opt.seed << "\n"
      << "# sec_per_1k scaled from reps sentences at batch size 1\n"
      << "# peak_bytes: forward-pass attention score and weight buffers only (no optimizer state)\n";
}

/// Two side-by-side line charts: seconds per 1k sentences and peak attention
/// bytes against sentence length, one line per model.
inline void write_bench_svg(std::ostream& out, const std::vector<BenchRecord>& rows) {
  const double W = 420, H = 300, pad = 50;
  std::vector<std::size_t> lengths;
  for (const auto& r : rows)
    if (std::find(lengths.begin(), lengths.end(), r.length) == lengths.end()) lengths.push_back(r.length);
  std::sort(lengths.begin(), lengths.end());
  auto xpos = [&](std::size_t len) {
    if (lengths.size() < 2) return pad;
    const double lo = std::log2(static_cast<double>(lengths.front()));
    const double hi = std::log2(static_cast<double>(lengths.back()));
    return pad + (W - 2 * pad) * (std::log2(static_cast<double>(len)) - lo) / (hi - lo);
  };
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 2 * W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  const char* colors[] = {"#1f77b4", "#d62728"};
  for (int chart = 0; chart < 2; ++chart) {
    const double x0 = chart * W;
    double ymax = 0.0;
    for (const auto& r : rows)
      if (r.status == "ok") ymax = std::max(ymax, chart == 0 ? r.sec_per_1k : static_cast<double>(r.peak_bytes));
    if (ymax <= 0.0) ymax = 1.0;
    out << "<g transform=\"translate(" << x0 << ",0)\">\n";
    out << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\">"
        << (chart == 0 ? "seconds per 1k sentences" : "peak attention bytes") << "</text>\n";
    out << "<line x1=\"" << pad << "\" y1=\"" << H - pad << "\" x2=\"" << W - pad << "\" y2=\"" << H - pad << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\"" << H - pad << "\" stroke=\"black\"/>\n";
    for (auto len : lengths)
      out << "<text x=\"" << xpos(len) << "\" y=\"" << H - pad + 15 << "\" text-anchor=\"middle\">" << len << "</text>\n";
    out << "<text x=\"" << pad - 5 << "\" y=\"" << pad << "\" text-anchor=\"end\">" << ymax << "</text>\n";
    int ci = 0;
    for (const char* model : {"NFLAT", "FLAT"}) {
      std::ostringstream pts;
      for (const auto& r : rows) {
        if (r.model != model || r.status != "ok") continue;
        const double v = chart == 0 ? r.sec_per_1k : static_cast<double>(r.peak_bytes);
        pts << xpos(r.length) << ',' << (H - pad) - (H - 2 * pad) * v / ymax << ' ';
      }
      out << "<polyline fill=\"none\" stroke=\"" << colors[ci] << "\" stroke-width=\"2\" points=\"" << pts.str() << "\"/>\n";
      out << "<text x=\"" << W - pad << "\" y=\"" << pad + 14 * ci << "\" fill=\"" << colors[ci] << "\" text-anchor=\"end\">" << model << "</text>\n";
      ++ci;
    }
    out << "</g>\n";
  }
  out << "</svg>\n";
}

}  // namespace nflat
