// Entity-level exact-match precision/recall/F1 over BMES or BIO tag sequences.
#pragma once

#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "nflat/crf.hpp"
#include "nflat/errors.hpp"

namespace nflat {

struct Entity {
  std::string type;
  int head = 0;  // 1-based, inclusive
  int tail = 0;
  auto operator<=>(const Entity&) const = default;
};

struct ParsedTag {
  char prefix = 'O';
  std::string type;
};

inline ParsedTag parse_tag(const std::string& tag, TagScheme scheme) {
  if (tag == "O") return {};
  const std::string allowed = scheme == TagScheme::BMES ? "BMES" : "BI";
  if (tag.size() < 3 || tag[1] != '-' || allowed.find(tag[0]) == std::string::npos) {
    throw DataError("tag '" + tag + "' is not valid under the " + to_string(scheme) + " scheme");
  }
  return {tag[0], tag.substr(2)};
}

/// Maximal well-formed spans: BMES = B M* E | S, BIO = B I*. Fragments that
/// do not fit the grammar contribute nothing.
inline std::vector<Entity> extract_entities(const std::vector<std::string>& tags, TagScheme scheme) {
  std::vector<Entity> out;
  const int n = static_cast<int>(tags.size());
  int open_head = 0;
  std::string open_type;
  bool open = false;
  for (int i = 0; i < n; ++i) {
    const auto t = parse_tag(tags[static_cast<std::size_t>(i)], scheme);
    const int pos = i + 1;
    if (scheme == TagScheme::BMES) {
      switch (t.prefix) {
        case 'B':
          open = true;
          open_head = pos;
          open_type = t.type;
          break;
        case 'M':
          if (open && t.type != open_type) open = false;
          break;
        case 'E':
          if (open && t.type == open_type) out.push_back({t.type, open_head, pos});
          open = false;
          break;
        case 'S':
          out.push_back({t.type, pos, pos});
          open = false;
          break;
        default:
          open = false;
      }
    } else {
      const bool continues = t.prefix == 'I' && open && t.type == open_type;
      if (!continues && open) {
        out.push_back({open_type, open_head, pos - 1});
        open = false;
      }
      if (t.prefix == 'B') {
        open = true;
        open_head = pos;
        open_type = t.type;
      }
    }
  }
  if (scheme == TagScheme::BIO && open) out.push_back({open_type, open_head, n});
  return out;
}

struct TypeCounts {
  std::size_t gold = 0;
  std::size_t predicted = 0;
  std::size_t correct = 0;
};

struct EvalReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  TypeCounts total;
  std::map<std::string, TypeCounts> per_type;
};

inline double f1_score(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

inline void finalize(EvalReport& rep) {
  const auto& c = rep.total;
  rep.precision = c.predicted ? static_cast<double>(c.correct) / static_cast<double>(c.predicted) : 0.0;
  rep.recall = c.gold ? static_cast<double>(c.correct) / static_cast<double>(c.gold) : 0.0;
  rep.f1 = f1_score(rep.precision, rep.recall);
}

/// Adds one sentence's entity sets to the running counts.
inline void accumulate(EvalReport& rep, const std::vector<Entity>& gold, const std::vector<Entity>& pred) {
  const std::set<Entity> g(gold.begin(), gold.end());
  const std::set<Entity> p(pred.begin(), pred.end());
  for (const auto& e : g) {
    ++rep.total.gold;
    ++rep.per_type[e.type].gold;
  }
  for (const auto& e : p) {
    ++rep.total.predicted;
    ++rep.per_type[e.type].predicted;
    if (g.count(e)) {
      ++rep.total.correct;
      ++rep.per_type[e.type].correct;
    }
  }
}

inline EvalReport evaluate_tags(const std::vector<std::vector<std::string>>& gold,
                                const std::vector<std::vector<std::string>>& pred, TagScheme scheme) {
  if (gold.size() != pred.size()) throw DataError("gold and predicted corpora differ in sentence count");
  EvalReport rep;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i].size() != pred[i].size()) {
      throw DataError("sentence " + std::to_string(i) + ": gold and predicted lengths differ");
    }
    accumulate(rep, extract_entities(gold[i], scheme), extract_entities(pred[i], scheme));
  }
  finalize(rep);
  return rep;
}

}  // namespace nflat
