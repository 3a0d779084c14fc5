// Lexicon trie, word matching over a character sequence, and embedding tables.
#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "nflat/errors.hpp"
#include "nflat/rng.hpp"
#include "nflat/utf8.hpp"

namespace nflat {

inline constexpr int kNonWordId = -1;
inline constexpr const char* kNonWordToken = "<non_word>";
inline constexpr const char* kUnknownToken = "<unk>";
inline constexpr std::size_t kMinMatchLength = 2;
inline constexpr std::size_t kDefaultMaxMatchLength = 10;

/// Character trie over Unicode scalar values. Immutable once built.
class LexiconTrie {
 public:
  LexiconTrie() : nodes_(1) {}

  /// Returns the dense id of `word`; re-inserting a word keeps its first id.
  int insert(std::u32string_view word) {
    std::size_t cur = 0;
    for (char32_t c : word) {
      auto it = nodes_[cur].children.find(c);
      if (it == nodes_[cur].children.end()) {
        const auto next = static_cast<int>(nodes_.size());
        nodes_[cur].children.emplace(c, next);
        nodes_.emplace_back();
        cur = static_cast<std::size_t>(next);
      } else {
        cur = static_cast<std::size_t>(it->second);
      }
    }
    if (nodes_[cur].word_id < 0) {
      nodes_[cur].word_id = static_cast<int>(words_.size());
      words_.emplace_back(word);
    }
    return nodes_[cur].word_id;
  }

  std::optional<int> find(std::u32string_view word) const {
    std::size_t cur = 0;
    for (char32_t c : word) {
      auto next = child(cur, c);
      if (!next) return std::nullopt;
      cur = *next;
    }
    if (nodes_[cur].word_id < 0) return std::nullopt;
    return nodes_[cur].word_id;
  }

  bool contains(std::u32string_view word) const { return find(word).has_value(); }
  std::size_t word_count() const { return words_.size(); }
  const std::u32string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::u32string>& words() const { return words_; }

  std::optional<std::size_t> child(std::size_t node, char32_t c) const {
    const auto& ch = nodes_[node].children;
    auto it = ch.find(c);
    if (it == ch.end()) return std::nullopt;
    return static_cast<std::size_t>(it->second);
  }
  int terminal_id(std::size_t node) const { return nodes_[node].word_id; }

 private:
  struct TrieNode {
    std::map<char32_t, int> children;
    int word_id = -1;
  };
  std::vector<TrieNode> nodes_;
  std::vector<std::u32string> words_;
};

inline LexiconTrie build_trie(std::span<const std::u32string> words) {
  LexiconTrie trie;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (words[i].empty()) throw DataError("empty lexicon word at index " + std::to_string(i));
    trie.insert(words[i]);
  }
  return trie;
}

inline LexiconTrie build_trie(std::span<const std::string> utf8_words) {
  std::vector<std::u32string> words;
  words.reserve(utf8_words.size());
  for (const auto& w : utf8_words) words.push_back(utf8::decode(w));
  return build_trie(std::span<const std::u32string>(words));
}

/// A lexicon hit. head/tail are 1-based character positions, inclusive.
struct MatchedWord {
  int word_id = kNonWordId;
  std::u32string surface;
  int head = 0;
  int tail = 0;

  bool is_non_word() const { return word_id == kNonWordId; }
  bool operator==(const MatchedWord&) const = default;
};

/// Every lexicon word of length [kMinMatchLength, max_len] occurring in
/// `chars`, ordered by (head, tail).
inline std::vector<MatchedWord> match_words(const LexiconTrie& trie, std::u32string_view chars,
                                            std::size_t max_len = kDefaultMaxMatchLength) {
  std::vector<MatchedWord> out;
  const std::size_t n = chars.size();
  for (std::size_t start = 0; start < n; ++start) {
    std::size_t node = 0;
    for (std::size_t len = 1; len <= max_len && start + len <= n; ++len) {
      auto next = trie.child(node, chars[start + len - 1]);
      if (!next) break;
      node = *next;
      const int id = trie.terminal_id(node);
      if (id >= 0 && len >= kMinMatchLength) {
        out.push_back(MatchedWord{id, std::u32string(chars.substr(start, len)),
                                  static_cast<int>(start + 1), static_cast<int>(start + len)});
      }
    }
  }
  return out;
}

/// Appends the sentence-spanning <non_word> entry so that every character has
/// at least one attention target.
inline std::vector<MatchedWord> append_non_word(std::vector<MatchedWord> matches, std::size_t n) {
  matches.push_back(MatchedWord{kNonWordId, utf8::decode(kNonWordToken), 1, static_cast<int>(n)});
  return matches;
}

struct MatchStats {
  std::size_t sentences = 0;
  double avg_char_len = 0.0;
  std::size_t max_char_len = 0;
  double avg_matched_len = 0.0;
  std::size_t max_matched_len = 0;
  std::vector<std::size_t> char_len;
  std::vector<std::size_t> matched_len;
};

inline MatchStats match_stats(std::span<const std::u32string> corpus, const LexiconTrie& trie,
                              std::size_t max_len = kDefaultMaxMatchLength) {
  MatchStats st;
  st.sentences = corpus.size();
  double char_total = 0.0, matched_total = 0.0;
  for (const auto& s : corpus) {
    const std::size_t m = match_words(trie, s, max_len).size();
    st.char_len.push_back(s.size());
    st.matched_len.push_back(m);
    char_total += static_cast<double>(s.size());
    matched_total += static_cast<double>(m);
    st.max_char_len = std::max(st.max_char_len, s.size());
    st.max_matched_len = std::max(st.max_matched_len, m);
  }
  if (!corpus.empty()) {
    st.avg_char_len = char_total / static_cast<double>(corpus.size());
    st.avg_matched_len = matched_total / static_cast<double>(corpus.size());
  }
  return st;
}

/// Token -> row map plus a dense rows x dim matrix. Word tables carry an
/// unknown row (mean of the file rows) and a zero <non_word> row.
struct EmbeddingTable {
  std::vector<std::string> tokens;
  std::unordered_map<std::string, int> index;
  std::vector<double> matrix;
  std::size_t dim = 0;
  int unknown_row = -1;
  int non_word_row = -1;

  std::size_t rows() const { return tokens.size(); }

  int row_of(const std::string& token) const {
    auto it = index.find(token);
    return it == index.end() ? unknown_row : it->second;
  }

  std::span<const double> row(int r) const {
    return std::span<const double>(matrix).subspan(static_cast<std::size_t>(r) * dim, dim);
  }

  int add_row(const std::string& token, std::span<const double> values) {
    const auto r = static_cast<int>(tokens.size());
    tokens.push_back(token);
    index.emplace(token, r);
    matrix.insert(matrix.end(), values.begin(), values.end());
    return r;
  }

  /// Adds the unknown (row mean) and <non_word> (zeros) rows.
  void add_specials() {
    std::vector<double> mean(dim, 0.0);
    const std::size_t base = rows();
    for (std::size_t r = 0; r < base; ++r)
      for (std::size_t j = 0; j < dim; ++j) mean[j] += matrix[r * dim + j];
    if (base > 0)
      for (auto& v : mean) v /= static_cast<double>(base);
    unknown_row = add_row(kUnknownToken, mean);
    non_word_row = add_row(kNonWordToken, std::vector<double>(dim, 0.0));
  }

  /// Random-normal rows for `words` (UTF-8), then the special rows.
  static EmbeddingTable random(std::span<const std::string> words, std::size_t dim, Rng& rng,
                               double stddev = 0.1) {
    EmbeddingTable t;
    t.dim = dim;
    std::vector<double> row(dim);
    for (const auto& w : words) {
      if (t.index.count(w)) continue;
      for (auto& v : row) v = rng.normal(0.0, stddev);
      t.add_row(w, row);
    }
    t.add_specials();
    return t;
  }
};

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline bool parse_uint(std::string_view s, std::size_t& v) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return ec == std::errc() && p == s.data() + s.size();
}

inline bool parse_double(std::string_view s, double& v) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return ec == std::errc() && p == s.data() + s.size();
}

inline bool is_header(const std::vector<std::string_view>& f) {
  std::size_t a = 0, b = 0;
  return f.size() == 2 && parse_uint(f[0], a) && parse_uint(f[1], b);
}

}  // namespace detail

/// word2vec-style text embeddings: optional "count dim" header, then
/// "token v1 ... vdim" per line.
inline EmbeddingTable load_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embedding file " + path);
  EmbeddingTable t;
  std::string line;
  std::size_t line_no = 0;
  std::vector<double> row;
  while (std::getline(in, line)) {
    ++line_no;
    auto fields = detail::split_ws(line);
    if (fields.empty()) continue;
    if (line_no == 1 && detail::is_header(fields)) {
      detail::parse_uint(fields[1], t.dim);
      continue;
    }
    const std::size_t width = fields.size() - 1;
    if (width == 0) throw file_error(path, line_no, "token without vector");
    if (t.dim == 0) t.dim = width;
    if (width != t.dim) {
      throw file_error(path, line_no,
                       "expected " + std::to_string(t.dim) + " values, found " + std::to_string(width));
    }
    row.assign(width, 0.0);
    for (std::size_t j = 0; j < width; ++j) {
      if (!detail::parse_double(fields[j + 1], row[j]))
        throw file_error(path, line_no, "bad float '" + std::string(fields[j + 1]) + "'");
    }
    const std::string token(fields[0]);
    utf8::decode(token);
    if (t.index.count(token)) throw file_error(path, line_no, "duplicate token '" + token + "'");
    t.add_row(token, row);
  }
  if (t.rows() == 0) throw DataError("embedding file " + path + " contains no vectors");
  t.add_specials();
  return t;
}

/// One word per line; extra whitespace-separated fields (embedding files) are
/// ignored, as is a leading "count dim" header.
inline std::vector<std::string> load_word_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open lexicon file " + path);
  std::vector<std::string> words;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto fields = detail::split_ws(line);
    if (fields.empty()) continue;
    if (line_no == 1 && detail::is_header(fields)) continue;
    try {
      utf8::decode(fields[0]);
    } catch (const utf8::DecodeError& e) {
      throw file_error(path, line_no, e.what());
    }
    words.emplace_back(fields[0]);
  }
  return words;
}

}  // namespace nflat
