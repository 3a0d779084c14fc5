// CoNLL-style character/tag corpora and raw text input.
#pragma once

#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "nflat/errors.hpp"
#include "nflat/lexicon.hpp"
#include "nflat/utf8.hpp"

namespace nflat {

struct Sentence {
  std::u32string chars;
  std::vector<std::string> tags;  // empty when unlabeled
  std::string id;

  std::size_t size() const { return chars.size(); }
  bool labeled() const { return !tags.empty(); }
};

using Corpus = std::vector<Sentence>;

/// One "char tag" (or bare "char") per line, blank line between sentences.
inline Corpus read_conll(std::istream& in, const std::string& name = "<stream>") {
  Corpus corpus;
  Sentence cur;
  std::string line;
  std::size_t line_no = 0;
  auto flush = [&] {
    if (cur.chars.empty()) return;
    cur.id = name + "#" + std::to_string(corpus.size());
    corpus.push_back(std::move(cur));
    cur = Sentence{};
  };
  while (std::getline(in, line)) {
    ++line_no;
    auto fields = detail::split_ws(line);
    if (fields.empty()) {
      flush();
      continue;
    }
    if (fields.size() > 2) throw file_error(name, line_no, "expected 'char tag', found " + std::to_string(fields.size()) + " fields");
    std::u32string ch;
    try {
      ch = utf8::decode(fields[0]);
    } catch (const utf8::DecodeError& e) {
      throw file_error(name, line_no, e.what());
    }
    if (ch.size() != 1) throw file_error(name, line_no, "first field must be a single character");
    const bool has_tag = fields.size() == 2;
    if (!cur.chars.empty() && has_tag != cur.labeled()) throw file_error(name, line_no, "mixed labeled and unlabeled lines");
    cur.chars.push_back(ch[0]);
    if (has_tag) cur.tags.emplace_back(fields[1]);
  }
  flush();
  return corpus;
}

inline Corpus read_conll(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset " + path);
  return read_conll(in, path);
}

/// One sentence per non-empty line; whitespace is dropped.
inline Corpus read_raw_text(std::istream& in, const std::string& name = "<stream>") {
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::u32string decoded;
    try {
      decoded = utf8::decode(line);
    } catch (const utf8::DecodeError& e) {
      throw file_error(name, line_no, e.what());
    }
    Sentence s;
    for (char32_t c : decoded)
      if (c != U' ' && c != U'\t' && c != U'\r' && c != U'\n' && c != 0x3000) s.chars.push_back(c);
    if (s.chars.empty()) continue;
    s.id = name + "#" + std::to_string(corpus.size());
    corpus.push_back(std::move(s));
  }
  return corpus;
}

inline void write_conll(std::ostream& out, const Corpus& corpus, char sep = ' ') {
  for (const auto& s : corpus) {
    for (std::size_t i = 0; i < s.chars.size(); ++i) {
      out << utf8::encode(s.chars[i]);
      if (s.labeled()) out << sep << s.tags[i];
      out << '\n';
    }
    out << '\n';
  }
}

inline std::vector<std::u32string> corpus_chars(const Corpus& corpus) {
  std::vector<std::u32string> out;
  out.reserve(corpus.size());
  for (const auto& s : corpus) out.push_back(s.chars);
  return out;
}

}  // namespace nflat
