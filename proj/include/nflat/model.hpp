// The full tagger: embeddings -> InterFormer -> context encoder -> linear -> CRF.
#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nflat/attention.hpp"
#include "nflat/config.hpp"
#include "nflat/context_encoder.hpp"
#include "nflat/crf.hpp"
#include "nflat/data.hpp"
#include "nflat/interformer.hpp"
#include "nflat/lexicon.hpp"
#include "nflat/ops.hpp"
#include "nflat/params.hpp"

namespace nflat {

/// Character vocabulary; row 0 is padding, row 1 unknown.
class CharVocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnknown = 1;

  CharVocab() : chars_{U'\0', U'\0'} {}

  static CharVocab from_corpus(const Corpus& corpus) {
    CharVocab v;
    std::map<char32_t, int> seen;
    for (const auto& s : corpus)
      for (char32_t c : s.chars) seen.emplace(c, 0);
    for (const auto& [c, _] : seen) v.add(c);
    return v;
  }

  int add(char32_t c) {
    auto [it, inserted] = index_.try_emplace(c, static_cast<int>(chars_.size()));
    if (inserted) chars_.push_back(c);
    return it->second;
  }
  int id(char32_t c) const {
    auto it = index_.find(c);
    return it == index_.end() ? kUnknown : it->second;
  }
  std::size_t size() const { return chars_.size(); }
  /// Characters in row order, specials excluded.
  std::u32string characters() const { return std::u32string(chars_.begin() + 2, chars_.end()); }

 private:
  std::vector<char32_t> chars_;
  std::map<char32_t, int> index_;
};

/// A padded mini-batch with all index tensors precomputed.
struct Batch {
  std::vector<std::size_t> lengths;
  std::size_t max_chars = 0;
  std::size_t max_words = 0;
  std::vector<int> char_ids;
  std::vector<std::vector<MatchedWord>> words;
  std::vector<int> word_rows;
  AttentionLayout inter;
  AttentionLayout self;
  std::vector<std::vector<int>> gold;
  std::vector<std::string> ids;

  std::size_t size() const { return lengths.size(); }
};

struct ForwardOptions {
  bool training = false;
  Rng* rng = nullptr;
  AttentionMeter* meter = nullptr;
};

class NflatModel {
 public:
  NflatModel() = default;

  /// Fresh model. `lexicon_words` drive matching; `embeddings`, when given,
  /// supplies (trainable) word vectors, otherwise they are random.
  static NflatModel create(const ModelConfig& config, const Corpus& train,
                           const std::vector<std::string>& lexicon_words,
                           std::optional<EmbeddingTable> embeddings, Rng& rng) {
    config.validate();
    std::vector<std::vector<std::string>> tags;
    for (const auto& s : train) {
      if (!s.labeled()) throw DataError("training sentence " + s.id + " has no tags");
      tags.push_back(s.tags);
    }
    NflatModel m;
    m.config_ = config;
    m.schema_ = LabelSchema::from_tags(tags);
    m.chars_ = CharVocab::from_corpus(train);
    m.words_ = embeddings ? std::move(*embeddings) : EmbeddingTable::random(lexicon_words, config.d_model, rng);
    m.set_lexicon(lexicon_words);
    m.init_params(rng);
    return m;
  }

  /// Reassembles a model from saved parts; parameters must already be in `store`.
  static NflatModel assemble(ModelConfig config, LabelSchema schema, CharVocab chars, EmbeddingTable words,
                             const std::vector<std::string>& lexicon_words, ParamStore store) {
    NflatModel m;
    m.config_ = std::move(config);
    m.schema_ = std::move(schema);
    m.chars_ = std::move(chars);
    m.words_ = std::move(words);
    m.set_lexicon(lexicon_words);
    m.store_ = std::move(store);
    m.bind();
    return m;
  }

  const ModelConfig& config() const { return config_; }
  ModelConfig& mutable_config() { return config_; }
  const LabelSchema& schema() const { return schema_; }
  const CharVocab& chars() const { return chars_; }
  const EmbeddingTable& word_table() const { return words_; }
  const LexiconTrie& lexicon() const { return lexicon_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  bool uses_non_word() const { return config_.ablation != Ablation::NoTag; }

  /// Matched words for a sentence, <non_word> appended unless ablated.
  std::vector<MatchedWord> word_sequence(std::u32string_view chars) const {
    auto matches = match_words(lexicon_, chars, config_.max_match_len);
    if (uses_non_word()) matches = append_non_word(std::move(matches), chars.size());
    return matches;
  }

  Batch make_batch(std::span<const Sentence* const> sentences) const {
    Batch b;
    for (const Sentence* s : sentences) {
      if (s->chars.empty()) throw DataError("empty sentence " + s->id);
      b.lengths.push_back(s->size());
      b.max_chars = std::max(b.max_chars, s->size());
      b.words.push_back(word_sequence(s->chars));
      b.max_words = std::max(b.max_words, b.words.back().size());
      b.ids.push_back(s->id);
    }
    b.max_words = std::max<std::size_t>(b.max_words, 1);
    const std::size_t B = sentences.size();
    b.char_ids.assign(B * b.max_chars, CharVocab::kPad);
    b.word_rows.assign(B * b.max_words, words_.non_word_row);
    bool labeled = true;
    for (std::size_t i = 0; i < B; ++i) {
      const Sentence& s = *sentences[i];
      for (std::size_t t = 0; t < s.size(); ++t) b.char_ids[i * b.max_chars + t] = chars_.id(s.chars[t]);
      for (std::size_t j = 0; j < b.words[i].size(); ++j) {
        const auto& w = b.words[i][j];
        b.word_rows[i * b.max_words + j] = w.is_non_word() ? words_.non_word_row : word_row_[static_cast<std::size_t>(w.word_id)];
      }
      labeled = labeled && s.labeled();
    }
    if (labeled) {
      for (const Sentence* s : sentences) {
        std::vector<int> g;
        g.reserve(s->size());
        for (const auto& t : s->tags) g.push_back(schema_.index_of(t));
        b.gold.push_back(std::move(g));
      }
    }
    b.inter = inter_layout(b.lengths, b.words);
    b.self = self_layout(b.lengths);
    return b;
  }

  Batch make_batch(const Sentence& s) const {
    const Sentence* p = &s;
    return make_batch(std::span<const Sentence* const>(&p, 1));
  }

  /// Emission scores [B, n, L].
  Tensor forward(const Batch& batch, const ForwardOptions& opt = {}) const {
    if (opt.training && !opt.rng) throw ContractError("training forward requires an Rng");
    Rng unused(0);
    Rng& rng = opt.rng ? *opt.rng : unused;
    const std::size_t B = batch.size(), n = batch.max_chars, m = batch.max_words, d = config_.d_model;

    auto xc = reshape(embedding_lookup(char_embed_, batch.char_ids), Shape{B, n, d});
    xc = dropout(xc, config_.char_embed_dropout, opt.training, rng);
    auto xw = embedding_lookup(word_embed_, batch.word_rows);
    xw = dropout(xw, config_.word_embed_dropout, opt.training, rng);
    if (word_proj_.defined()) xw = matmul(xw, word_proj_);
    xw = reshape(xw, Shape{B, m, d});

    BlockOptions block{config_.attn_dropout, config_.fc_dropout1, opt.training, opt.rng, opt.meter};
    InterFormerOptions inter_opt{config_.ablation, config_.tag_fallback, block};
    auto h = interformer_forward(xc, xw, batch.inter, inter_, inter_opt);
    auto c = self_attention_forward(h, batch.self, context_, block);
    c = dropout(c, config_.fc_dropout2, opt.training, rng);
    return linear(c, out_w_, out_b_);
  }

  /// Mean CRF negative log-likelihood over the batch.
  Tensor loss(const Batch& batch, const ForwardOptions& opt = {}) const {
    if (batch.gold.size() != batch.size()) throw DataError("loss requires a labeled batch");
    auto em = forward(batch, opt);
    return scale(crf_batch_nll(em, batch.lengths, batch.gold, crf_), 1.0 / static_cast<double>(batch.size()));
  }

  std::vector<std::vector<int>> decode(const Batch& batch) const {
    NoGradGuard guard;
    auto em = forward(batch);
    const std::size_t L = schema_.size(), n = batch.max_chars;
    std::vector<std::vector<int>> out;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      std::span<const double> rows = em.data().subspan(b * n * L, batch.lengths[b] * L);
      out.push_back(viterbi_decode(rows, L, crf_));
    }
    return out;
  }

  std::vector<std::string> predict_tags(const Sentence& s) const {
    auto path = decode(make_batch(s)).front();
    std::vector<std::string> tags;
    for (int y : path) tags.push_back(schema_.label(y));
    return tags;
  }

  std::vector<std::string> lexicon_words_utf8() const {
    std::vector<std::string> out;
    for (const auto& w : lexicon_.words()) out.push_back(utf8::encode(w));
    return out;
  }

  const CrfParams& crf() const { return crf_; }

 private:
  void set_lexicon(const std::vector<std::string>& words) {
    std::vector<std::u32string> decoded;
    for (const auto& w : words) {
      auto d = utf8::decode(w);
      if (!d.empty()) decoded.push_back(std::move(d));
    }
    lexicon_ = build_trie(std::span<const std::u32string>(decoded));
    word_row_.clear();
    for (const auto& w : lexicon_.words()) word_row_.push_back(words_.row_of(utf8::encode(w)));
  }

  void init_params(Rng& rng) {
    const std::size_t d = config_.d_model;
    store_.add("char_embed", {chars_.size(), d}, Init::Normal, rng, 0.5);
    store_.insert("word_embed", Tensor::from(Shape{words_.rows(), words_.dim}, words_.matrix, true));
    if (words_.dim != d) store_.add("word_proj", {words_.dim, d}, Init::Xavier, rng);
    EncoderBlockParams::create(store_, "inter", d, config_.inter_heads(), config_.ffn_dim(), true, rng);
    EncoderBlockParams::create(store_, "context", d, config_.context_heads(), config_.ffn_dim(), false, rng);
    store_.add("out.w", {d, schema_.size()}, Init::Xavier, rng);
    store_.add("out.b", {schema_.size()}, Init::Zeros, rng);
    CrfParams::create(store_, "crf", schema_.size(), rng);
    bind();
  }

  void bind() {
    char_embed_ = store_.get("char_embed");
    word_embed_ = store_.get("word_embed");
    word_proj_ = store_.contains("word_proj") ? store_.get("word_proj") : Tensor();
    inter_ = EncoderBlockParams::bind(store_, "inter", config_.inter_heads());
    context_ = EncoderBlockParams::bind(store_, "context", config_.context_heads());
    out_w_ = store_.get("out.w");
    out_b_ = store_.get("out.b");
    crf_ = CrfParams::bind(store_, "crf");
  }

  ModelConfig config_;
  LabelSchema schema_;
  CharVocab chars_;
  EmbeddingTable words_;
  LexiconTrie lexicon_;
  std::vector<int> word_row_;
  ParamStore store_;

  Tensor char_embed_, word_embed_, word_proj_, out_w_, out_b_;
  InterFormerParams inter_;
  SelfAttnParams context_;
  CrfParams crf_;
};

}  // namespace nflat
