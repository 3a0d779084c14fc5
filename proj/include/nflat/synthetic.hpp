// Desk-scale synthetic NER corpus. Sentences are concatenations of
// vocabulary words and filler punctuation; entity words carry BMES tags.
//
// A fraction of the entity words is held out of the training split, so a
// character-only tagger has never seen them while a lexicon-aware one can
// still find them. The emitted embedding file places every entity word near a
// per-type prototype, standing in for pretrained word vectors.
#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <string>
#include <vector>

#include "nflat/data.hpp"
#include "nflat/errors.hpp"
#include "nflat/lexicon.hpp"
#include "nflat/rng.hpp"
#include "nflat/utf8.hpp"

namespace nflat {

struct SyntheticConfig {
  std::uint64_t seed = 7;
  std::size_t alphabet = 40;
  std::size_t entity_types = 3;
  std::size_t vocab = 120;
  double entity_fraction = 0.4;   // of the vocabulary
  double heldout_fraction = 0.25;  // of the entity words, dev/test only
  std::size_t distractors = 40;
  std::size_t min_len = 5;
  std::size_t max_len = 40;
  double entity_rate = 0.3;  // chance a slot draws an entity word
  double filler_rate = 0.1;  // chance a slot is punctuation
  std::size_t train = 200;
  std::size_t dev = 100;
  std::size_t test = 100;
  std::size_t embed_dim = 32;
  double embed_noise = 0.35;

  void validate() const {
    if (alphabet < entity_types || alphabet < 2) throw ConfigError("alphabet must be at least the number of entity types");
    if (entity_types == 0) throw ConfigError("need at least one entity type");
    if (vocab < 2 * entity_types) throw ConfigError("vocabulary too small for the entity types");
    if (min_len < 2 || max_len < min_len) throw ConfigError("bad sentence length range");
    if (!(entity_fraction > 0.0 && entity_fraction < 1.0)) throw ConfigError("entity_fraction must lie in (0,1)");
    if (!(heldout_fraction >= 0.0 && heldout_fraction < 1.0)) throw ConfigError("heldout_fraction must lie in [0,1)");
    if (embed_dim == 0) throw ConfigError("embed_dim must be positive");
    const double space = std::pow(static_cast<double>(alphabet), 4.0);
    if (static_cast<double>(vocab + distractors) * 4.0 > space) throw ConfigError("alphabet too small for the vocabulary");
  }
};

struct SyntheticWord {
  std::u32string surface;
  int type = -1;  // -1: not an entity
  bool heldout = false;
};

struct SyntheticData {
  Corpus train, dev, test;
  std::vector<SyntheticWord> vocab;
  std::vector<std::string> lexicon;  // vocabulary then distractors, UTF-8
  std::vector<std::string> types;
  EmbeddingTable embeddings;         // no special rows; add_specials() on load
};

inline std::string entity_type_name(std::size_t k) {
  static const char* names[] = {"PER", "LOC", "ORG", "GPE", "TIT", "EDU", "PRO", "RAC"};
  if (k < std::size(names)) return names[k];
  return "T" + std::to_string(k);
}

namespace detail {

inline char32_t synthetic_char(std::size_t k) { return static_cast<char32_t>(0x4E00 + 7 * k); }

inline const std::u32string& filler_chars() {
  static const std::u32string f = U"，。、！";
  return f;
}

}  // namespace detail

inline SyntheticData gen_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed, "synthetic");
  SyntheticData out;
  for (std::size_t k = 0; k < cfg.entity_types; ++k) out.types.push_back(entity_type_name(k));

  std::set<std::u32string> taken;
  auto fresh_word = [&] {
    for (;;) {
      std::u32string w;
      const auto len = static_cast<std::size_t>(rng.integer(2, 4));
      for (std::size_t i = 0; i < len; ++i)
        w.push_back(detail::synthetic_char(static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(cfg.alphabet) - 1))));
      if (taken.insert(w).second) return w;
    }
  };

  const auto n_entities = std::max<std::size_t>(cfg.entity_types, static_cast<std::size_t>(cfg.entity_fraction * static_cast<double>(cfg.vocab)));
  std::vector<std::size_t> entity_ids, common_ids;
  for (std::size_t i = 0; i < cfg.vocab; ++i) {
    SyntheticWord w;
    w.surface = fresh_word();
    if (i < n_entities) {
      w.type = static_cast<int>(i % cfg.entity_types);
      entity_ids.push_back(i);
    } else {
      common_ids.push_back(i);
    }
    out.vocab.push_back(std::move(w));
  }
  // Hold out the last words of each type, keeping at least one per type seen.
  std::vector<std::vector<std::size_t>> by_type(cfg.entity_types);
  for (auto i : entity_ids) by_type[static_cast<std::size_t>(out.vocab[i].type)].push_back(i);
  std::vector<std::size_t> seen_entities;
  for (auto& ids : by_type) {
    const auto held = std::min(ids.size() - 1, static_cast<std::size_t>(cfg.heldout_fraction * static_cast<double>(ids.size()) + 0.5));
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (k + held >= ids.size()) out.vocab[ids[k]].heldout = true;
      else seen_entities.push_back(ids[k]);
    }
  }

  for (const auto& w : out.vocab) out.lexicon.push_back(utf8::encode(w.surface));
  std::vector<std::u32string> distractors;
  for (std::size_t i = 0; i < cfg.distractors; ++i) {
    distractors.push_back(fresh_word());
    out.lexicon.push_back(utf8::encode(distractors.back()));
  }

  // Embeddings: type prototypes for entities, one shared prototype for
  // everything else.
  std::vector<std::vector<double>> proto(cfg.entity_types + 1, std::vector<double>(cfg.embed_dim));
  for (auto& p : proto)
    for (auto& x : p) x = rng.normal(0.0, 1.0);
  out.embeddings.dim = cfg.embed_dim;
  std::vector<double> row(cfg.embed_dim);
  auto emit = [&](const std::u32string& w, int type) {
    const auto& p = proto[type < 0 ? cfg.entity_types : static_cast<std::size_t>(type)];
    for (std::size_t j = 0; j < cfg.embed_dim; ++j) row[j] = p[j] + rng.normal(0.0, cfg.embed_noise);
    out.embeddings.add_row(utf8::encode(w), row);
  };
  for (const auto& w : out.vocab) emit(w.surface, w.type);
  for (const auto& w : distractors) emit(w, -1);

  std::set<std::u32string> used;
  auto make_split = [&](std::size_t count, bool allow_heldout, const std::string& name) {
    Corpus c;
    const auto& ent_pool = allow_heldout ? entity_ids : seen_entities;
    std::size_t attempts = 0;
    while (c.size() < count) {
      if (++attempts > 1000 * (count + 1)) throw ConfigError("cannot generate enough distinct sentences");
      Sentence s;
      const auto target = static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(cfg.min_len), static_cast<std::int64_t>(cfg.max_len)));
      while (s.size() < target) {
        const double r = rng.uniform();
        if (r < cfg.filler_rate) {
          const auto& f = detail::filler_chars();
          s.chars.push_back(f[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(f.size()) - 1))]);
          s.tags.emplace_back("O");
          continue;
        }
        const bool entity = r < cfg.filler_rate + cfg.entity_rate;
        const auto& pool = entity ? ent_pool : common_ids;
        const auto& w = out.vocab[pool[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(pool.size()) - 1))]];
        if (s.size() + w.surface.size() > cfg.max_len) break;
        s.chars += w.surface;
        if (w.type < 0) {
          s.tags.insert(s.tags.end(), w.surface.size(), "O");
        } else {
          const auto& t = out.types[static_cast<std::size_t>(w.type)];
          s.tags.push_back("B-" + t);
          for (std::size_t k = 1; k + 1 < w.surface.size(); ++k) s.tags.push_back("M-" + t);
          s.tags.push_back("E-" + t);
        }
      }
      if (s.size() < cfg.min_len || !used.insert(s.chars).second) continue;
      s.id = name + "#" + std::to_string(c.size());
      c.push_back(std::move(s));
    }
    return c;
  };
  out.train = make_split(cfg.train, false, "train");
  out.dev = make_split(cfg.dev, true, "dev");
  out.test = make_split(cfg.test, true, "test");
  return out;
}

/// Writes train/dev/test.conll, lexicon.txt and embeddings.vec into `dir`.
inline void write_synthetic(const SyntheticData& data, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  auto open = [&](const std::string& name) {
    std::ofstream f(dir / name, std::ios::binary);
    if (!f) throw DataError("cannot write " + (dir / name).string());
    return f;
  };
  {
    auto f = open("train.conll");
    write_conll(f, data.train);
  }
  {
    auto f = open("dev.conll");
    write_conll(f, data.dev);
  }
  {
    auto f = open("test.conll");
    write_conll(f, data.test);
  }
  {
    auto f = open("lexicon.txt");
    for (const auto& w : data.lexicon) f << w << '\n';
  }
  {
    auto f = open("embeddings.vec");
    f << data.embeddings.rows() << ' ' << data.embeddings.dim << '\n';
    f.precision(9);
    for (std::size_t r = 0; r < data.embeddings.rows(); ++r) {
      f << data.embeddings.tokens[r];
      for (double x : data.embeddings.row(static_cast<int>(r))) f << ' ' << x;
      f << '\n';
    }
  }
}

/// Table with unknown and <non_word> rows added, as load_embeddings returns.
inline EmbeddingTable synthetic_embeddings(const SyntheticData& data) {
  EmbeddingTable t = data.embeddings;
  t.add_specials();
  return t;
}

}  // namespace nflat
